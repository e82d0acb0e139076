//! Marching cubes iso-surface extraction.
//!
//! The 256-entry case table is derived once at startup by tracing the
//! iso-contour on the six faces of the cell: each face contributes zero, one
//! or two oriented segments, the segments chain into closed loops, and every
//! loop is fan-triangulated. Ambiguous faces (diagonal corners on the same
//! side) always separate the inside corners. Neighbouring cells see the same
//! corner states on a shared face, so they produce the same segments with
//! opposite orientation, which makes the surface watertight.

use std::collections::HashMap;
use std::sync::OnceLock;

use super::grid::VolumeGrid;
use super::mesh::TriangleMesh;

/// Corner `c` sits at offset `(c >> 2 & 1, c >> 1 & 1, c & 1)` in `(d, h, w)`.
fn corner_offset(c: usize) -> [usize; 3] {
    [c >> 2 & 1, c >> 1 & 1, c & 1]
}

/// The twelve cell edges as corner pairs `(a, b)` with `b = a | axis_bit`.
fn edges() -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(12);
    for bit in [4usize, 2, 1] {
        for a in 0..8 {
            if a & bit == 0 {
                out.push((a, a | bit));
            }
        }
    }
    out
}

/// Triangles of every case, as triples of local edge ids.
struct CaseTable {
    edges: Vec<(usize, usize)>,
    triangles: Vec<Vec<[usize; 3]>>,
}

fn edge_faces(edges: &[(usize, usize)]) -> Vec<[usize; 2]> {
    // face id = axis * 2 + side; an edge lies on the faces of the two axes it does not span
    edges
        .iter()
        .map(|&(a, b)| {
            let span = (a ^ b).trailing_zeros() as usize; // bit index: 2 = d, 1 = h, 0 = w
            let mut faces = [0usize; 2];
            let mut k = 0;
            for bit in 0..3 {
                if bit != span {
                    let side = a >> bit & 1;
                    faces[k] = bit * 2 + side;
                    k += 1;
                }
            }
            faces
        })
        .collect()
}

fn build_table() -> CaseTable {
    let edges = edges();
    let faces_of_edge = edge_faces(&edges);
    let edge_id = |a: usize, b: usize| edges.iter().position(|&(x, y)| (x, y) == (a.min(b), a.max(b))).unwrap();
    let mid = |e: usize| {
        let (a, b) = edges[e];
        let pa = corner_offset(a);
        let pb = corner_offset(b);
        std::array::from_fn::<f64, 3, _>(|k| (pa[k] + pb[k]) as f64 * 0.5)
    };
    let pos = |c: usize| corner_offset(c).map(|x| x as f64);

    let mut triangles = Vec::with_capacity(256);
    for case in 0..256usize {
        let inside = |c: usize| case >> c & 1 == 1;
        // oriented segments: next[e_from] = e_to
        let mut next: HashMap<usize, usize> = HashMap::new();
        for bit in 0..3 {
            for side in 0..2 {
                // corners of this face in cyclic order
                let free: Vec<usize> = (0..3).filter(|&b| b != bit).collect();
                let base = side << bit;
                let (u, v) = (1 << free[0], 1 << free[1]);
                let ring = [base, base | u, base | u | v, base | v];
                let normal: [f64; 3] = {
                    let mut n = [0.0; 3];
                    // offset index 0 is d (bit 2), 1 is h (bit 1), 2 is w (bit 0)
                    n[2 - bit] = if side == 1 { 1.0 } else { -1.0 };
                    n
                };
                let crossings: Vec<usize> = (0..4)
                    .filter(|&i| inside(ring[i]) != inside(ring[(i + 1) % 4]))
                    .collect();
                let mut segments: Vec<(usize, usize, usize)> = Vec::new(); // (edge, edge, an inside corner)
                match crossings.len() {
                    0 => {}
                    2 => {
                        let e0 = edge_id(ring[crossings[0]], ring[(crossings[0] + 1) % 4]);
                        let e1 = edge_id(ring[crossings[1]], ring[(crossings[1] + 1) % 4]);
                        let corner = *ring.iter().find(|&&c| inside(c)).unwrap();
                        segments.push((e0, e1, corner));
                    }
                    4 => {
                        for i in 0..4 {
                            if inside(ring[i]) {
                                let prev = ring[(i + 3) % 4];
                                let nxt = ring[(i + 1) % 4];
                                segments.push((edge_id(prev, ring[i]), edge_id(ring[i], nxt), ring[i]));
                            }
                        }
                    }
                    _ => unreachable!("a face has an even number of sign changes"),
                }
                for (e0, e1, corner) in segments {
                    // orient so that (q - p) x n points away from the inside corner
                    let p = mid(e0);
                    let q = mid(e1);
                    let i = pos(corner);
                    let dir = [q[0] - p[0], q[1] - p[1], q[2] - p[2]];
                    let cross = [
                        dir[1] * normal[2] - dir[2] * normal[1],
                        dir[2] * normal[0] - dir[0] * normal[2],
                        dir[0] * normal[1] - dir[1] * normal[0],
                    ];
                    let toward: f64 = (0..3).map(|k| cross[k] * (i[k] - p[k])).sum();
                    let (from, to) = if toward > 0.0 { (e1, e0) } else { (e0, e1) };
                    let prev = next.insert(from, to);
                    assert!(prev.is_none(), "edge {from} has two outgoing segments in case {case}");
                }
            }
        }

        let mut tris = Vec::new();
        let mut visited = [false; 12];
        let mut starts: Vec<usize> = next.keys().copied().collect();
        starts.sort_unstable();
        for start in starts {
            if visited[start] {
                continue;
            }
            let mut ring = vec![start];
            visited[start] = true;
            let mut cur = next[&start];
            while cur != start {
                visited[cur] = true;
                ring.push(cur);
                cur = next[&cur];
            }
            // pick a fan apex whose diagonals never run along a cell face
            let k = ring.len();
            let share_face = |a: usize, b: usize| faces_of_edge[a].iter().any(|f| faces_of_edge[b].contains(f));
            let apex = (0..k)
                .find(|&s| (2..k.saturating_sub(1)).all(|i| !share_face(ring[s], ring[(s + i) % k])))
                .unwrap_or(0);
            for i in 1..k - 1 {
                tris.push([ring[apex], ring[(apex + i) % k], ring[(apex + i + 1) % k]]);
            }
        }
        triangles.push(tris);
    }
    CaseTable { edges, triangles }
}

fn table() -> &'static CaseTable {
    static TABLE: OnceLock<CaseTable> = OnceLock::new();
    TABLE.get_or_init(build_table)
}

/// Number of triangles the case table emits for each corner configuration.
pub fn case_triangle_counts() -> Vec<usize> {
    table().triangles.iter().map(Vec::len).collect()
}

/// Extracts the iso-surface `field = level` as a triangle mesh.
///
/// A voxel is inside when its value is strictly greater than `level`. Vertex
/// positions are millimeters in `(x, y, z) = (w, h, d)` order, and triangles
/// wind counter-clockwise when seen from the outside (lower values).
pub fn marching_cubes(field: &VolumeGrid, level: f64) -> TriangleMesh {
    let table = table();
    let [nd, nh, nw] = field.shape();
    let spacing = field.spacing();
    let data = field.data();
    let mut mesh = TriangleMesh::default();
    if nd < 2 || nh < 2 || nw < 2 {
        return mesh;
    }
    let mut vertex_of: HashMap<(usize, usize), u32> = HashMap::new();
    let strides = [nh * nw, nw, 1usize];
    for d in 0..nd - 1 {
        for h in 0..nh - 1 {
            for w in 0..nw - 1 {
                let origin = (d * nh + h) * nw + w;
                let mut case = 0usize;
                let mut values = [0.0f64; 8];
                for (c, value) in values.iter_mut().enumerate() {
                    let o = corner_offset(c);
                    let idx = origin + o[0] * strides[0] + o[1] * strides[1] + o[2];
                    *value = data[idx];
                    if data[idx] > level {
                        case |= 1 << c;
                    }
                }
                let tris = &table.triangles[case];
                if tris.is_empty() {
                    continue;
                }
                let mut local = [u32::MAX; 12];
                for tri in tris {
                    let mut idx = [0u32; 3];
                    for (slot, &e) in idx.iter_mut().zip(tri.iter()) {
                        if local[e] == u32::MAX {
                            let (a, b) = table.edges[e];
                            let oa = corner_offset(a);
                            let axis = (a ^ b).trailing_zeros() as usize;
                            let ia = origin + oa[0] * strides[0] + oa[1] * strides[1] + oa[2];
                            let key = (ia, axis);
                            local[e] = *vertex_of.entry(key).or_insert_with(|| {
                                let ob = corner_offset(b);
                                let (va, vb) = (values[a], values[b]);
                                let s = if vb != va { ((level - va) / (vb - va)).clamp(0.0, 1.0) } else { 0.5 };
                                let grid_pos: [f64; 3] = std::array::from_fn(|k| {
                                    let base = [d, h, w][k] as f64;
                                    base + oa[k] as f64 + s * (ob[k] as f64 - oa[k] as f64)
                                });
                                mesh.vertices.push([
                                    grid_pos[2] * spacing[2],
                                    grid_pos[1] * spacing[1],
                                    grid_pos[0] * spacing[0],
                                ]);
                                (mesh.vertices.len() - 1) as u32
                            });
                        }
                        *slot = local[e];
                    }
                    if mesh.triangle_area_of(idx) > 0.0 {
                        mesh.triangles.push(idx);
                    }
                }
            }
        }
    }
    mesh.compact();
    mesh
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::grid::VolumeKind;
    use proptest::prelude::*;

    fn ball(n: usize, radius: f64) -> VolumeGrid {
        let c = (n as f64 - 1.0) / 2.0;
        let mut g = VolumeGrid::zeros([n; 3], [1.0; 3], VolumeKind::Distance);
        for d in 0..n {
            for h in 0..n {
                for w in 0..n {
                    let r = ((d as f64 - c).powi(2) + (h as f64 - c).powi(2) + (w as f64 - c).powi(2)).sqrt();
                    g.set(d, h, w, 1.0 / (1.0 + (r - radius).exp()));
                }
            }
        }
        g
    }

    #[test]
    fn table_shape() {
        let counts = case_triangle_counts();
        assert_eq!(counts.len(), 256);
        assert_eq!(counts[0], 0);
        assert_eq!(counts[255], 0);
        assert_eq!(counts[1], 1);
        // one face of four corners inside → a quad
        assert_eq!(counts[0b0000_1111], 2);
        assert!(counts.iter().all(|&c| c <= 12));
    }

    #[test]
    fn constant_fields_are_empty() {
        let g = VolumeGrid::new([4, 4, 4], [1.0; 3], VolumeKind::Distance, vec![0.2; 64]).unwrap();
        assert!(marching_cubes(&g, 0.5).triangles.is_empty());
        let g = VolumeGrid::new([4, 4, 4], [1.0; 3], VolumeKind::Distance, vec![0.9; 64]).unwrap();
        assert!(marching_cubes(&g, 0.5).triangles.is_empty());
    }

    #[test]
    fn ball_is_closed_sphere() {
        let g = ball(20, 6.0);
        let mesh = marching_cubes(&g, 0.5);
        assert!(mesh.is_watertight());
        assert_eq!(mesh.euler_characteristic(), 2);
        // outward orientation gives positive enclosed volume close to the ball volume
        let vol = mesh.signed_volume();
        let expected = 4.0 / 3.0 * std::f64::consts::PI * 6.0f64.powi(3);
        assert!((vol - expected).abs() / expected < 0.05, "volume {vol} vs {expected}");
    }

    #[test]
    fn vertices_interpolate_to_level() {
        let g = ball(12, 3.5);
        let mesh = marching_cubes(&g, 0.37);
        for v in &mesh.vertices {
            // map back to grid coordinates and trilinearly evaluate along the edge
            let p = [v[2], v[1], v[0]];
            let st = crate::volume::sample::Stencil::new(
                g.shape(),
                crate::volume::sample::NormalizedPoint(p.map(|x| x / 11.0 * 2.0 - 1.0)),
            );
            let val: f64 = st.index.iter().zip(st.weight).map(|(&i, w)| w * g.data()[i]).sum();
            assert!((val - 0.37).abs() < 1e-9, "value {val}");
        }
    }

    #[test]
    fn spacing_scales_vertices() {
        let mut g = ball(12, 3.5);
        let plain = marching_cubes(&g, 0.5);
        g = VolumeGrid::new(g.shape(), [2.0, 1.0, 0.5], VolumeKind::Distance, g.into_data()).unwrap();
        let scaled = marching_cubes(&g, 0.5);
        assert_eq!(plain.triangles, scaled.triangles);
        for (a, b) in plain.vertices.iter().zip(&scaled.vertices) {
            assert!((a[0] * 0.5 - b[0]).abs() < 1e-12);
            assert!((a[2] * 2.0 - b[2]).abs() < 1e-12);
        }
    }

    fn interior_field() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, 5 * 5 * 5).prop_map(|inner| {
            // surround with a frame of zeros so no foreground touches the border
            let mut out = vec![0.0; 7 * 7 * 7];
            for d in 0..5 {
                for h in 0..5 {
                    for w in 0..5 {
                        out[((d + 1) * 7 + h + 1) * 7 + w + 1] = inner[(d * 5 + h) * 5 + w];
                    }
                }
            }
            out
        })
    }

    proptest! {
        #[test]
        fn edges_shared_by_at_most_two(data in prop::collection::vec(0.0f64..1.0, 6 * 6 * 6), level in 0.1f64..0.9) {
            let g = VolumeGrid::new([6, 6, 6], [1.0; 3], VolumeKind::Distance, data).unwrap();
            let mesh = marching_cubes(&g, level);
            prop_assert!(mesh.edge_valences().values().all(|&c| c <= 2));
        }

        #[test]
        fn interior_fields_are_watertight(data in interior_field(), level in 0.1f64..0.9) {
            let g = VolumeGrid::new([7, 7, 7], [1.0; 3], VolumeKind::Distance, data).unwrap();
            let mesh = marching_cubes(&g, level);
            prop_assert!(mesh.is_watertight());
            prop_assert!(mesh.is_consistently_oriented());
        }
    }
}
