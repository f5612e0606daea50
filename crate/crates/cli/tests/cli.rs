use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn homoglab(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_homoglab"));
    cmd.args(args).env_remove("HOMOGLAB_THREADS");
    if let Some(t) = threads {
        cmd.env("HOMOGLAB_THREADS", t);
    }
    cmd.output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.cfg");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn csvs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_str().unwrap().to_string(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn constant_medium_reproduces_its_diagonal() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "dim = 2\nsize = 16\nlambda = 0.25\nfamily = constant\ndiag = 0.5 0.8\ndump = true\n");
    let out = tmp.path().join("out");
    let o = homoglab(&["correctors", "--config", &cfg, "--out", out.to_str().unwrap()], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ah = fs::read_to_string(out.join("ah.csv")).unwrap();
    let mut lines = ah.lines();
    assert_eq!(lines.next(), Some("i,j,a_h"));
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        let (i, j, v): (usize, usize, f64) = (f[0].parse().unwrap(), f[1].parse().unwrap(), f[2].parse().unwrap());
        let want = if i != j { 0.0 } else if i == 1 { 0.5 } else { 0.8 };
        assert!((v - want).abs() <= 1e-10, "{line}");
    }
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    for name in ["ah.csv", "certifications.csv", "solves.csv", "correctors.dump"] {
        assert!(manifest.contains(&format!("artifact = {name} sha256:")), "{manifest}");
    }
    assert!(manifest.contains("status = ok"));
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "dim = 2\nsize = 64\nseed = 5\nbig_r = 16\nsamples = 3\n");
    let mut runs = Vec::new();
    for (n, threads) in [(1, "1"), (2, "3"), (3, "1")] {
        let out = tmp.path().join(format!("out{n}"));
        let o = homoglab(&["excess", "--config", &cfg, "--out", out.to_str().unwrap()], Some(threads));
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        runs.push(csvs(&out));
    }
    assert!(runs[0].iter().any(|(n, _)| n == "excess.csv"));
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[0], runs[2]);
}

#[test]
fn thm_t_names_the_offending_point() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "dim = 2\nsize = 64\nx0 = 16; 4\n");
    let out = tmp.path().join("out");
    let o = homoglab(&["thmT", "--config", &cfg, "--out", out.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("PRECONDITION_GEOMETRY") && err.contains("[4, 0, 0]"), "{err}");
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("status = thmT failed"), "{manifest}");
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "dim = 2\nseed = 1\nseed = 2\n");
    let o = homoglab(&["growth", "--config", &cfg], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("PARSE_ERROR at line 3"));

    let cfg = write_config(tmp.path(), "lambda = 1.5\n");
    let o = homoglab(&["growth", "--config", &cfg], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("VALIDATION_ERROR(lambda)"));

    let cfg = write_config(tmp.path(), "command = growth\n");
    let o = homoglab(&["thmT", "--config", &cfg], None);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn seed_flag_changes_the_medium() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "dim = 2\nsize = 16\n");
    let mut ah = Vec::new();
    for seed in ["1", "2"] {
        let out = tmp.path().join(seed);
        let o = homoglab(&["correctors", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", seed], None);
        assert!(o.status.success());
        ah.push(fs::read(out.join("ah.csv")).unwrap());
    }
    assert_ne!(ah[0], ah[1]);
}

#[test]
fn lemma_table() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "dim = 2\nsize = 32\nlemma_radii = 4 8\nensemble_n = 4\ndictionary_m = 6\n");
    let out = tmp.path().join("out");
    let o = homoglab(&["lemmaL", "--config", &cfg, "--out", out.to_str().unwrap()], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let t = fs::read_to_string(out.join("lemmaL.csv")).unwrap();
    assert_eq!(t.lines().count(), 3);
    assert!(t.starts_with("R,N,M,lhs,rhs,ratio,dropped\n4,4,6,"));
}
