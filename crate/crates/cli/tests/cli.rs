use std::io::Read;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use tempfile::TempDir;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").canonicalize().unwrap()
}

fn anagram(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_anagram"))
        .args(args)
        .current_dir(cwd)
        .env_remove("ANAGRAM_BACKEND_URL")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, name: &str, extra: &str) -> PathBuf {
    let mixture = configs().join("toy_mixture.toml");
    let text = format!(
        "dims = \"1x8x8\"\nviews = [\"identity\", \"flip:v\"]\nprompts = [\"a cat\", \"a dog\"]\nguidance = 2.0\n\
         steps = 20\nbackend = \"analytic\"\nmixture = \"{}\"\n{extra}",
        mixture.display()
    );
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Parsed manifest without fields that legitimately differ between runs.
fn stable_manifest(path: &Path) -> toml::Table {
    let mut t: toml::Table = toml::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    t.remove("out");
    t["manifest"].as_table_mut().unwrap().remove("wall_clock_secs");
    t
}

fn files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> =
        std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    v.sort();
    v
}

#[test]
fn generate_is_reproducible_and_manifest_reruns() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "task.toml", "");
    for out in ["a", "b"] {
        let o = anagram(&["generate", "--config", s(&cfg), "--out", out], tmp.path());
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(files(&a), files(&b));
    for f in files(&a).iter().filter(|f| *f != "manifest.toml") {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(stable_manifest(&a.join("manifest.toml")), stable_manifest(&b.join("manifest.toml")));

    let o = anagram(&["generate", "--config", s(&a.join("manifest.toml")), "--out", "c"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let c = tmp.path().join("c");
    assert_eq!(std::fs::read(a.join("x0.nten")).unwrap(), std::fs::read(c.join("x0.nten")).unwrap());
    assert_eq!(stable_manifest(&a.join("manifest.toml")), stable_manifest(&c.join("manifest.toml")));

    let o = anagram(&["generate", "--config", s(&cfg), "--out", "d", "--seed", "1"], tmp.path());
    assert_eq!(code(&o), 0);
    assert_ne!(std::fs::read(a.join("x0.nten")).unwrap(), std::fs::read(tmp.path().join("d/x0.nten")).unwrap());
}

#[test]
fn broken_views_are_refused_unless_allowed() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "task.toml", "");
    let text = std::fs::read_to_string(&cfg).unwrap().replace("\"flip:v\"", "\"broken_scale:1.5\"");
    std::fs::write(&cfg, text).unwrap();
    let o = anagram(&["generate", "--config", s(&cfg), "--out", "x"], tmp.path());
    assert_eq!(code(&o), 5, "{}", stderr(&o));
    assert!(stderr(&o).contains("broken_scale:1.5"));
    assert!(!tmp.path().join("x").exists());

    let o = anagram(&["generate", "--config", s(&cfg), "--out", "x", "--allow-broken"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let err = stderr(&o);
    assert!(err.contains("!!! WARNING") && err.contains("FAIL_VARIANCE"), "{err}");
    let m: toml::Table = toml::from_str(&std::fs::read_to_string(tmp.path().join("x/manifest.toml")).unwrap()).unwrap();
    let notes = m["manifest"]["broken_views"].as_array().unwrap();
    assert_eq!(notes.len(), 1);
    assert_eq!(notes[0]["verdict"].as_str(), Some("fail_variance"));
}

#[test]
fn zero_steps_warns_and_returns_initial_noise() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "task.toml", "");
    let o = anagram(&["generate", "--config", s(&cfg), "--out", "z", "--steps", "0"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("steps = 0"));
    let z = tmp.path().join("z");
    assert_eq!(std::fs::read(z.join("x0_raw.nten")).unwrap(), std::fs::read(z.join("x_init.nten")).unwrap());
}

#[test]
fn batch_runs_write_one_directory_per_seed() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "task.toml", "seeds = [3, 4, 5]\n");
    let o = anagram(&["generate", "--config", s(&cfg), "--out", "batch"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let batch = tmp.path().join("batch");
    assert_eq!(files(&batch), ["batch.toml", "seed_3", "seed_4", "seed_5"]);
    let single = anagram(&["generate", "--config", s(&cfg), "--out", "one", "--seed", "4"], tmp.path());
    assert_eq!(code(&single), 0);
    assert_eq!(
        std::fs::read(batch.join("seed_4/x0.nten")).unwrap(),
        std::fs::read(tmp.path().join("one/x0.nten")).unwrap()
    );
}

#[test]
fn analytic_backend_makes_no_network_calls() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    listener.set_nonblocking(true).unwrap();
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    let stop = Arc::new(AtomicUsize::new(0));
    let stopper = stop.clone();
    let watcher = std::thread::spawn(move || {
        while stopper.load(Ordering::SeqCst) == 0 {
            if let Ok((mut s, _)) = listener.accept() {
                counter.fetch_add(1, Ordering::SeqCst);
                let _ = s.read(&mut [0u8; 64]);
            }
            std::thread::sleep(std::time::Duration::from_millis(5));
        }
    });
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "task.toml", "");
    let o = Command::new(env!("CARGO_BIN_EXE_anagram"))
        .args(["generate", "--config", s(&cfg), "--out", "net"])
        .current_dir(tmp.path())
        .env("ANAGRAM_BACKEND_URL", &url)
        .output()
        .unwrap();
    stop.store(1, Ordering::SeqCst);
    watcher.join().unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(hits.load(Ordering::SeqCst), 0);
}

#[test]
fn config_and_backend_errors_have_distinct_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", "colour = 3\n");
    assert_eq!(code(&anagram(&["generate", "--config", s(&cfg)], tmp.path())), 2);
    let cfg = write_config(tmp.path(), "task.toml", "");
    assert_eq!(code(&anagram(&["generate", "--config", "missing.toml"], tmp.path())), 2);
    let o = anagram(&["generate", "--config", s(&cfg), "--prompt-typo"], tmp.path());
    assert_ne!(code(&o), 0);

    let unused = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("remote:http://{}", unused.local_addr().unwrap());
    drop(unused);
    let o = anagram(&["generate", "--config", s(&cfg), "--backend", &url, "--out", "r"], tmp.path());
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let o = anagram(&["generate", "--config", s(&cfg), "--backend", "remote", "--out", "r"], tmp.path());
    assert_eq!(code(&o), 2, "{}", stderr(&o));

    let text = std::fs::read_to_string(&cfg).unwrap().replace("\"a dog\"]", "\"a horse\"]");
    std::fs::write(&cfg, text).unwrap();
    let o = anagram(&["generate", "--config", s(&cfg), "--out", "u"], tmp.path());
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("a horse"));
}

#[test]
fn verify_view_reports_and_exits() {
    let tmp = TempDir::new().unwrap();
    let o = anagram(&["verify-view", "identity", "-n", "4000"], tmp.path());
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("overall: PASS"));

    let o = anagram(&["verify-view", "broken_bilinear_rotate:45", "--dims", "1x8x8"], tmp.path());
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("verdict = fail_correlation"), "{}", stdout(&o));

    std::fs::write(tmp.path().join("rev.perm"), "perm 4\n3 2 1 0\n").unwrap();
    let o = anagram(&["verify-view", "perm:rev.perm", "--dims", "1x2x2", "-n", "2000"], tmp.path());
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("bit_exact=true"));
    assert!(stdout(&o).contains("admissibility: exact_permutation"));

    let o = anagram(&["verify-view", "rotate:90", "--dims", "1x4x4", "-n", "2000", "--json"], tmp.path());
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["noise"]["verdict"], "pass");

    assert_eq!(code(&anagram(&["verify-view", "rotate:45"], tmp.path())), 2);
}

fn generate_seeds(tmp: &Path, seeds: &str) -> PathBuf {
    let cfg = write_config(tmp, "task.toml", &format!("seeds = {seeds}\n"));
    let o = anagram(&["generate", "--config", s(&cfg), "--out", "runs"], tmp);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    tmp.join("runs")
}

#[test]
fn eval_scores_generated_runs() {
    let tmp = TempDir::new().unwrap();
    let runs = generate_seeds(tmp.path(), "[0, 1, 2]");
    for out in ["e1", "e2"] {
        let o = anagram(&["eval", "--images", s(&runs), "--out", out], tmp.path());
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let csv = std::fs::read_to_string(tmp.path().join("e1/records.csv")).unwrap();
    assert_eq!(csv, std::fs::read_to_string(tmp.path().join("e2/records.csv")).unwrap());
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("id,n,alignment,concealment,diagonal,scores"));
    let summary: toml::Table = toml::from_str(&std::fs::read_to_string(tmp.path().join("e1/summary.toml")).unwrap()).unwrap();
    assert_eq!(summary["records"].as_integer(), Some(3));

    let o = anagram(&["eval", "--images", s(&runs), "--embedder", "constant", "--out", "ec"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary: toml::Table = toml::from_str(&std::fs::read_to_string(tmp.path().join("ec/summary.toml")).unwrap()).unwrap();
    assert!((summary["concealment"].as_float().unwrap() - 0.5).abs() < 1e-12);
    assert!((summary["concealment_q95"].as_float().unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn eval_single_record_summary_equals_record() {
    let tmp = TempDir::new().unwrap();
    let runs = generate_seeds(tmp.path(), "[7]");
    let o = anagram(&["eval", "--images", s(&runs), "--out", "e"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut rdr = csv::Reader::from_path(tmp.path().join("e/records.csv")).unwrap();
    let row = rdr.records().next().unwrap().unwrap();
    let summary: toml::Table = toml::from_str(&std::fs::read_to_string(tmp.path().join("e/summary.toml")).unwrap()).unwrap();
    let a: f64 = row[2].parse().unwrap();
    let c: f64 = row[3].parse().unwrap();
    for k in ["alignment", "alignment_q90", "alignment_q95"] {
        assert_eq!(summary[k].as_float(), Some(a), "{k}");
    }
    for k in ["concealment", "concealment_q90", "concealment_q95"] {
        assert_eq!(summary[k].as_float(), Some(c), "{k}");
    }
}

#[test]
fn eval_lists_every_missing_image() {
    let tmp = TempDir::new().unwrap();
    let records = "[[record]]\nid = \"a\"\nimage = \"first.png\"\nviews = [\"identity\"]\nprompts = [\"x\"]\n\n\
                   [[record]]\nid = \"b\"\nimage = \"second.png\"\nviews = [\"identity\"]\nprompts = [\"y\"]\n";
    std::fs::write(tmp.path().join("records.toml"), records).unwrap();
    let o = anagram(&["eval", "--images", ".", "--records", "records.toml"], tmp.path());
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    assert!(err.contains("first.png") && err.contains("second.png"), "{err}");
}

fn pair_count(path: &Path) -> usize {
    let t: toml::Table = toml::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    t.get("pair").and_then(|p| p.as_array()).map_or(0, |a| a.len())
}

#[test]
fn dataset_commands() {
    let tmp = TempDir::new().unwrap();
    let o = anagram(&["dataset", "cifar", "--out", "cifar.toml"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(pair_count(&tmp.path().join("cifar.toml")), 45);

    std::fs::write(tmp.path().join("one_style.txt"), "an oil painting of\n").unwrap();
    std::fs::write(tmp.path().join("two.txt"), "a cat\n# comment\na dog\na cat\n").unwrap();
    let o = anagram(
        &["dataset", "sampled", "--styles", "one_style.txt", "--subjects", "two.txt", "--out", "one.toml"],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(pair_count(&tmp.path().join("one.toml")), 1);

    let styles = configs().join("styles.txt");
    let subjects = configs().join("subjects.txt");
    for out in ["p1.toml", "p2.toml"] {
        let o = anagram(
            &["dataset", "sampled", "--styles", s(&styles), "--subjects", s(&subjects), "--seed", "9", "--count", "4", "--out", out],
            tmp.path(),
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let p1 = std::fs::read(tmp.path().join("p1.toml")).unwrap();
    assert_eq!(p1, std::fs::read(tmp.path().join("p2.toml")).unwrap());
    assert_eq!(pair_count(&tmp.path().join("p1.toml")), 4);

    let o = anagram(&["dataset", "sampled", "--subjects", "two.txt"], tmp.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn generate_from_pairs_file() {
    let tmp = TempDir::new().unwrap();
    std::fs::write(tmp.path().join("s.txt"), "toy\n").unwrap();
    std::fs::write(tmp.path().join("subj.txt"), "cat\ndog\n").unwrap();
    let pairs = "[[pair]]\nstyle = \"a\"\nsubjects = [\"cat\", \"dog\"]\n\n[[pair]]\nstyle = \"a\"\nsubjects = [\"dog\", \"cat\"]\n";
    std::fs::write(tmp.path().join("pairs.toml"), pairs).unwrap();
    let cfg = write_config(tmp.path(), "task.toml", "pairs = \"pairs.toml\"\n");
    let o = anagram(&["generate", "--config", s(&cfg), "--out", "pp"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(files(&tmp.path().join("pp")), ["batch.toml", "pair_000", "pair_001"]);
    let m: toml::Table = toml::from_str(&std::fs::read_to_string(tmp.path().join("pp/pair_001/manifest.toml")).unwrap()).unwrap();
    assert_eq!(m["prompts"].as_array().unwrap()[0].as_str(), Some("a dog"));
}

#[test]
fn frames_end_at_the_view() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "task.toml", "");
    assert_eq!(code(&anagram(&["generate", "--config", s(&cfg), "--out", "g"], tmp.path())), 0);
    let o = anagram(&["frames", "--image", "g/x0.nten", "--view", "flip:v", "--frames", "6", "--out", "f"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let f = tmp.path().join("f");
    assert_eq!(files(&f).len(), 6);
    let g = tmp.path().join("g");
    assert_eq!(std::fs::read(f.join("frame_000.png")).unwrap(), std::fs::read(g.join("view_0.png")).unwrap());
    assert_eq!(std::fs::read(f.join("frame_005.png")).unwrap(), std::fs::read(g.join("view_1.png")).unwrap());

    let o = anagram(&["frames", "--image", "g/view_0.png", "--view", "rotate:90", "--frames", "3", "--out", "r"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(files(&tmp.path().join("r")).len(), 3);
}
