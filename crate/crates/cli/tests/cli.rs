use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ffn_core::eval::FeatureTable;
use ffn_core::ffn::{build_ffn, FfnModel, FfnTopology};

const SMALL_ELF16: &str = r#"
[elf16]
stripes = 4
bins = 8
color_spaces = ["rgb", "hsv"]
gabor_bank = []
schmid_bank = []
lbp = true
"#;

fn small_dim() -> usize {
    4 * 8 * (3 + 3 + 1)
}

/// 24-bit BMP, rows bottom-up with BGR pixels padded to four bytes.
fn write_bmp(path: &Path, width: usize, height: usize, rgb: impl Fn(usize, usize) -> [u8; 3]) {
    let stride = (3 * width).div_ceil(4) * 4;
    let size = stride * height;
    let mut b = Vec::new();
    b.extend_from_slice(b"BM");
    b.extend_from_slice(&((54 + size) as u32).to_le_bytes());
    b.extend_from_slice(&[0; 4]);
    b.extend_from_slice(&54u32.to_le_bytes());
    b.extend_from_slice(&40u32.to_le_bytes());
    b.extend_from_slice(&(width as i32).to_le_bytes());
    b.extend_from_slice(&(height as i32).to_le_bytes());
    b.extend_from_slice(&1u16.to_le_bytes());
    b.extend_from_slice(&24u16.to_le_bytes());
    b.extend_from_slice(&[0; 4]);
    b.extend_from_slice(&(size as u32).to_le_bytes());
    b.extend_from_slice(&[0; 16]);
    for row in (0..height).rev() {
        let start = b.len();
        for col in 0..width {
            let [r, g, bl] = rgb(row, col);
            b.extend_from_slice(&[bl, g, r]);
        }
        b.resize(start + stride, 0);
    }
    std::fs::write(path, b).unwrap();
}

/// `ids` identities with one 32×16 image per view: upper and lower halves
/// in id-specific colours, shifted slightly between views.
fn write_dataset(root: &Path, ids: usize) {
    for (dir, shift) in [("cam_a", 0u8), ("cam_b", 9u8)] {
        std::fs::create_dir_all(root.join(dir)).unwrap();
        for id in 0..ids {
            let id8 = id as u8;
            let top = [id8.wrapping_mul(40), 255u8.wrapping_sub(id8.wrapping_mul(30)), 90u8.wrapping_add(id8.wrapping_mul(20))];
            let bottom = [200u8.wrapping_sub(id8.wrapping_mul(25)), id8.wrapping_mul(15).wrapping_add(shift), id8.wrapping_mul(60)];
            write_bmp(&root.join(format!("{dir}/{id}_0.bmp")), 16, 32, |row, col| {
                let base = if row < 16 { top } else { bottom };
                base.map(|c| c.wrapping_add(((row + col) % 3) as u8 + shift))
            });
        }
    }
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new(ids: usize, extra: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&dir.path().join("data"), ids);
        let cfg = format!(
            "seed = 5\nout_dir = \"out\"\n[dataset]\nroot = \"data\"\n{SMALL_ELF16}\n\
             [train]\nmax_iters = 20\n[eval]\ntrials = 3\nfeatures = [\"elf16\"]\n{extra}"
        );
        std::fs::write(dir.path().join("run.toml"), cfg).unwrap();
        Fixture { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn run(&self, args: &[&str]) -> Output {
        let cfg = self.path("run.toml");
        Command::new(env!("CARGO_BIN_EXE_ffn"))
            .args(args)
            .arg("--config")
            .arg(&cfg)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}\n{}",
            String::from_utf8_lossy(&out.stderr),
            String::from_utf8_lossy(&out.stdout)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    fn read(&self, rel: &str) -> Vec<u8> {
        std::fs::read(self.path(rel)).unwrap()
    }
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn extract_is_deterministic_and_sized() {
    let f = Fixture::new(10, "");
    f.ok(&["extract"]);
    let first = f.read("out/features/elf16.bin");
    f.ok(&["extract"]);
    assert_eq!(first, f.read("out/features/elf16.bin"));
    let t = FeatureTable::load(&f.path("out/features/elf16.bin")).unwrap();
    assert_eq!(t.len(), 20);
    assert!(t.iter().all(|(_, v)| v.len() == small_dim()));
    let ids = String::from_utf8(f.read("out/ids.csv")).unwrap();
    assert_eq!(ids.lines().count(), 11);
}

#[test]
fn mismatched_descriptor_config_is_refused() {
    let f = Fixture::new(6, "");
    f.ok(&["extract"]);
    let cfg = std::fs::read_to_string(f.path("run.toml")).unwrap();
    std::fs::write(f.path("run.toml"), cfg.replace("bins = 8", "bins = 6")).unwrap();
    let out = f.run(&["eval"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("digest"));
}

#[test]
fn zero_iterations_checkpoint_is_the_initialization() {
    let f = Fixture::new(6, "");
    let cfg = std::fs::read_to_string(f.path("run.toml")).unwrap();
    std::fs::write(f.path("run.toml"), cfg.replace("max_iters = 20", "max_iters = 0")).unwrap();
    f.ok(&["extract"]);
    f.ok(&["train"]);
    let saved = FfnModel::load(&f.path("out/model.ckpt")).unwrap();
    let fresh = build_ffn(FfnTopology::toy(small_dim(), 6), 5).unwrap();
    assert_eq!(saved.iteration, 0);
    for (a, b) in saved.layers().iter().zip(fresh.layers()) {
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.bias, b.bias);
    }
}

#[test]
fn resumed_training_continues_the_trace() {
    let straight = Fixture::new(6, "");
    straight.ok(&["extract"]);
    let cfg = std::fs::read_to_string(straight.path("run.toml")).unwrap();
    std::fs::write(straight.path("run.toml"), cfg.replace("max_iters = 20", "max_iters = 40")).unwrap();
    straight.ok(&["train"]);

    let split = Fixture::new(6, "");
    split.ok(&["extract"]);
    split.ok(&["train"]);
    let cfg = std::fs::read_to_string(split.path("run.toml")).unwrap();
    let resumed = cfg.replace("max_iters = 20", "max_iters = 40").replace("seed = 5", "seed = 5\nresume = true");
    std::fs::write(split.path("run.toml"), resumed).unwrap();
    let out = split.ok(&["train"]);
    assert!(out.contains("resuming from iteration 20"));

    let trace = String::from_utf8(split.read("out/loss.csv")).unwrap();
    let iters: Vec<u64> = trace.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(iters, (1..=40).collect::<Vec<_>>());
    assert_eq!(trace.as_bytes(), straight.read("out/loss.csv"));
    assert_eq!(split.read("out/model.ckpt"), straight.read("out/model.ckpt"));
}

#[test]
fn eval_writes_rows_for_each_feature_and_is_reproducible() {
    let f = Fixture::new(10, "");
    f.ok(&["extract"]);
    f.ok(&["train"]);
    f.ok(&["extract"]);
    assert!(f.path("out/features/fused.bin").exists());
    let cfg = std::fs::read_to_string(f.path("run.toml")).unwrap();
    let both = cfg.replace("features = [\"elf16\"]", "features = [\"elf16\", \"fused\"]\nmetrics = [\"l1\", \"lfda\"]");
    std::fs::write(f.path("run.toml"), both).unwrap();
    f.ok(&["eval"]);
    let table = String::from_utf8(f.read("out/eval/rank_table.csv")).unwrap();
    for label in ["elf16+l1", "fused+l1", "elf16+lfda", "fused+lfda"] {
        assert!(table.contains(&format!("{label},mean,")), "{label} missing:\n{table}");
    }
    assert_eq!(table.lines().filter(|l| l.starts_with("elf16+l1,")).count(), 1 + 3);
    let first = f.read("out/eval/rank_table.csv");
    let cmc = f.read("out/eval/cmc_fused+l1.csv");
    let svg = f.read("out/eval/cmc.svg");
    f.ok(&["eval"]);
    assert_eq!(first, f.read("out/eval/rank_table.csv"));
    assert_eq!(cmc, f.read("out/eval/cmc_fused+l1.csv"));
    assert_eq!(svg, f.read("out/eval/cmc.svg"));
}

#[test]
fn default_trial_count_is_ten() {
    let f = Fixture::new(6, "");
    let cfg = std::fs::read_to_string(f.path("run.toml")).unwrap();
    std::fs::write(f.path("run.toml"), cfg.replace("trials = 3\n", "")).unwrap();
    f.ok(&["extract"]);
    f.ok(&["eval"]);
    let table = String::from_utf8(f.read("out/eval/rank_table.csv")).unwrap();
    assert_eq!(table.lines().filter(|l| l.starts_with("elf16+l1,")).count(), 1 + 10);
}

const VERIFY_FAST: &str = "[verify]\ngrad_seeds = 1\nentries_per_block = 8\nprobe_seeds = 10\n";

#[test]
fn verify_passes_on_fresh_models() {
    let f = Fixture::new(4, VERIFY_FAST);
    let out = f.ok(&["verify"]);
    assert!(out.contains("verify: pass"), "{out}");
    assert!(out.contains("influence with identical descriptors: 0e0"), "{out}");
}

#[test]
fn verify_failure_names_the_block() {
    let f = Fixture::new(4, &format!("{VERIFY_FAST}grad_tolerance = 0.0\n"));
    let out = f.run(&["verify"]);
    assert_eq!(code(&out), 3);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("block") && err.contains("relative error"), "{err}");
}

#[test]
fn benchmark_reports_dims() {
    let f = Fixture::new(10, "");
    f.ok(&["benchmark"]);
    let csv = String::from_utf8(f.read("out/benchmark.csv")).unwrap();
    assert!(csv.contains(&format!("elf16,{},", small_dim())));
    assert!(csv.contains("fused,64,"));
    assert!(csv.contains("cnn-fc,64,"));
    let meta = String::from_utf8(f.read("out/benchmark_meta.toml")).unwrap();
    assert!(meta.contains("elf16_dim_reported = 8064"));
}

#[test]
fn exit_codes_follow_the_contract() {
    let f = Fixture::new(4, "");
    // Usage: unknown subcommand, unknown config key, missing dataset root.
    let out = Command::new(env!("CARGO_BIN_EXE_ffn")).arg("frobnicate").output().unwrap();
    assert_eq!(code(&out), 1);
    std::fs::write(f.path("bad.toml"), "sede = 3\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_ffn"))
        .args(["eval", "--config"])
        .arg(f.path("bad.toml"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 1);
    std::fs::write(f.path("nodata.toml"), "[dataset]\nroot = \"nowhere\"\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_ffn"))
        .args(["extract", "--config"])
        .arg(f.path("nodata.toml"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 1);
    // Data: features not yet extracted.
    let out = f.run(&["eval"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing features"));
    // Data: an identity seen in one view only.
    std::fs::remove_file(f.path("data/cam_b/2_0.bmp")).unwrap();
    let out = f.run(&["extract"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains('2'));
}

#[test]
fn flags_override_the_config() {
    let f = Fixture::new(4, VERIFY_FAST);
    let other = f.path("elsewhere");
    let out = Command::new(env!("CARGO_BIN_EXE_ffn"))
        .args(["verify", "--seed", "9", "--threads", "2", "--topology", "toy", "--config"])
        .arg(f.path("run.toml"))
        .arg("--out")
        .arg(&other)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(other.join("verify.txt")).unwrap();
    assert!(report.contains("grad_check seed 9"));
}
