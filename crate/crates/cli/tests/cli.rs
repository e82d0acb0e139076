use std::path::Path;
use std::process::Command;

fn near(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_near")).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "near {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn workflow_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::write(root.join("phantom.toml"), "resolution = 32\nsemi_axes_mm = [4.0, 8.0]\nspread_mm = 3.0\n").unwrap();
    std::fs::write(
        root.join("train.toml"),
        "[arch]\nlatent_dim = 4\nseed_channels = 4\nblock_channels = [4]\nfeature_channels = 2\nhead_hidden = [8]\n\n\
         [train]\nepochs = 2\ntrain_grid = 8\npoints_per_step = 512\n",
    )
    .unwrap();

    let gold = root.join("gold");
    let out = near(&["phantoms", "--n", "2", "--seed", "5", "--config", s(&root.join("phantom.toml")), "--out", s(&gold)]);
    assert!(out.starts_with("case_id,appearance_path,mask_path\n"));
    assert_eq!(out.lines().count(), 3);

    let distorted = root.join("distorted");
    let out = near(&["distort", "--manifest", s(&gold.join("manifest.json")), "--seed", "5", "--out", s(&distorted)]);
    for line in out.lines().skip(1) {
        let dice: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!((0.65..=0.75).contains(&dice), "{line}");
    }
    let manifest = distorted.join("manifest.json");

    let eval = near(&["eval", "--manifest", s(&manifest)]);
    assert!(eval.starts_with("case_id,dsc,nsd\n"));
    assert!(eval.lines().last().unwrap().starts_with("mean±std,"));

    let base = root.join("baseline");
    let out = near(&["baseline", "--manifest", s(&manifest), "--radii", "1,2", "--out", s(&base)]);
    assert!(out.starts_with("case_id,radius,mask_path\n"));
    assert!(base.join("radius_sweep.csv").exists());
    near(&["eval", "--manifest", s(&manifest), "--pred", s(&base), "--out", s(&base)]);
    assert!(base.join("metrics.csv").exists());

    let model = root.join("model");
    let out = near(&["train", "--manifest", s(&manifest), "--config", s(&root.join("train.toml")), "--out", s(&model)]);
    assert_eq!(out.lines().next(), Some("epoch,mean_loss"));
    assert_eq!(out.lines().count(), 3);

    let repaired = root.join("repaired");
    let ck = model.join("checkpoint.json");
    near(&["repair", "--checkpoint", s(&ck), "--manifest", s(&manifest), "--out", s(&repaired)]);
    let first = std::fs::read(repaired.join("case_000.mask.bin")).unwrap();
    near(&["repair", "--checkpoint", s(&ck), "--manifest", s(&manifest), "--case", "case_000", "--out", s(&repaired)]);
    assert_eq!(std::fs::read(repaired.join("case_000.mask.bin")).unwrap(), first);
    let unknown = Command::new(env!("CARGO_BIN_EXE_near"))
        .args(["repair", "--checkpoint", s(&ck), "--manifest", s(&manifest), "--case", "nope", "--out", s(&repaired)])
        .output()
        .unwrap();
    assert!(!unknown.status.success());

    let off = root.join("gold.off");
    let out = near(&["mesh", "--input", s(&gold.join("case_000.mask.json")), "--out", s(&off)]);
    let counts: Vec<usize> = out.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert!(counts[1] > 0);
    let stl = root.join("gold.stl");
    let out = near(&["mesh", "--input", s(&gold.join("case_000.mask.json")), "--format", "stl", "--out", s(&stl)]);
    assert_eq!(out.lines().nth(1).unwrap().split(',').nth(1).unwrap(), counts[1].to_string());
}

#[test]
fn missing_inputs_fail() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_near"))
        .args(["repair", "--checkpoint", "missing.json", "--manifest", "missing.json", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
}
