use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn toydown(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_toydown"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn toydown")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

const CONFIG: &str = r#"
seed = 1
replicates = 6

[hierarchy]
branching = [4, 4, 4]

[budget]
epsilon = 1.0
split = "equal"

[noise]
mode = "nonneg"

[districts]
method = "greedy"
k = 4
count = 2

[er]
county = { precincts = 60, tiny_fraction = 0.25, group_support = 0.87, complement_support = 0.48 }

[variance_curve]
step = 0.25
"#;

#[test]
fn gen_then_noise_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = stdout(&toydown(
        &["gen", "hierarchy", "--branching", "4,25", "--out", "c.csv", "--adjacency", "a.csv"],
        dir.path(),
    ));
    assert!(out.contains("100 leaves"));
    assert_eq!(fs::read_to_string(dir.path().join("a.csv")).unwrap().lines().count(), 1 + 2 * 10 * 9);
    let args = ["noise", "--counts", "c.csv", "--epsilon", "1", "--split", "equal", "--mode", "nonneg", "--seed", "5"];
    let a = stdout(&toydown(&[&args[..], &["--out", "n1.csv"]].concat(), dir.path()));
    let b = stdout(&toydown(&[&args[..], &["--out", "n2.csv"]].concat(), dir.path()));
    assert_eq!(a, b);
    let n1 = fs::read(dir.path().join("n1.csv")).unwrap();
    assert_eq!(n1, fs::read(dir.path().join("n2.csv")).unwrap());
    let text = String::from_utf8(n1).unwrap();
    assert_eq!(text.lines().count(), 1 + 105);
    assert!(text.lines().skip(1).all(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap() >= 0.0));
}

#[test]
fn allocate_prints_cube_root_split() {
    let dir = tempfile::tempdir().unwrap();
    let out = stdout(&toydown(&["allocate", "--branching", "10,10"], dir.path()));
    assert!(out.contains("split (0.0380, 0.1705, 0.7914)"), "{out}");
    assert!(out.contains("variance 14.5237"), "{out}");
}

#[test]
fn variance_and_frag_report_closed_forms() {
    let dir = tempfile::tempdir().unwrap();
    let out = stdout(&toydown(&["variance", "--branching", "10,10", "--epsilon", "1", "--split", "equal"], dir.path()));
    assert_eq!(out.trim(), "block variance 65.4552");
    let out = stdout(&toydown(&["frag", "--branching", "484,4,25", "--k", "4"], dir.path()));
    assert!(out.contains("greedy_upper 98"), "{out}");
}

#[test]
fn er_reads_generated_county() {
    let dir = tempfile::tempdir().unwrap();
    stdout(&toydown(&["gen", "county", "--precincts", "200", "--seed", "3", "--out", "e.csv"], dir.path()));
    let out = stdout(&toydown(
        &["er", "--elections", "e.csv", "--noise", "exact", "--replicates", "2", "--seed", "1"],
        dir.path(),
    ));
    assert!(out.contains("precincts 200"), "{out}");
    assert!(out.contains("(0 failed)"), "{out}");
}

#[test]
fn run_is_reproducible_for_a_seed() {
    // Same seed in separate directories, parallel then sequential.
    let dirs: Vec<_> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    for d in &dirs {
        fs::write(d.path().join("exp.toml"), CONFIG).unwrap();
    }
    let a = stdout(&toydown(&["run", "--config", "exp.toml", "--seed", "11", "--out", "out"], dirs[0].path()));
    let b = stdout(&toydown(
        &["run", "--config", "exp.toml", "--seed", "11", "--out", "out", "--sequential"],
        dirs[1].path(),
    ));
    assert_eq!(a, b);
    let mut names: Vec<_> = fs::read_dir(dirs[0].path().join("out"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.iter().any(|n| n == "report.json"));
    for n in &names {
        assert!(
            fs::read(dirs[0].path().join("out").join(n)).unwrap() == fs::read(dirs[1].path().join("out").join(n)).unwrap(),
            "{n:?} differs"
        );
    }
    let c = stdout(&toydown(&["run", "--config", "exp.toml", "--seed", "12", "--out", "out"], dirs[2].path()));
    assert!(
        fs::read(dirs[0].path().join("out/replicates.csv")).unwrap()
            != fs::read(dirs[2].path().join("out/replicates.csv")).unwrap()
    );
    assert!(c.contains("ER all"), "{c}");
}

#[test]
fn run_requires_seed() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("exp.toml"), CONFIG).unwrap();
    let o = toydown(&["run", "--config", "exp.toml"], dir.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("--seed"));
}

#[test]
fn failures_name_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "seed = 1\nreplicates = 2\nbogus = 3\n").unwrap();
    let o = toydown(&["run", "--config", "bad.toml", "--seed", "1"], dir.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("stage `config` failed"));

    let heavy = CONFIG.replace("split = \"equal\"", "split = \"block-heavy\"");
    fs::write(dir.path().join("heavy.toml"), heavy).unwrap();
    let o = toydown(&["run", "--config", "heavy.toml", "--seed", "1"], dir.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("stage `budget` failed"));

    let o = toydown(
        &["noise", "--counts", "missing.csv", "--epsilon", "1", "--split", "equal", "--seed", "1", "--out", "x.csv"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("stage `counts` failed"));
}
