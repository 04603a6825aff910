use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = "\
n_intermediate = 1
channels = 2
population = 4
generations = 2
top_k = 2
mutation_children = 2
epochs = 1
full_train_epochs = 1
batch_size = 4
n_samples = 10
n_random = 2
ablation_subnets = 2
seeds = 0
";

fn pathnas(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pathnas"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn tiny_config(dir: &Path, extra: &str) -> PathBuf {
    let p = dir.join("tiny.conf");
    fs::write(&p, format!("{TINY}{extra}")).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn assert_ok(o: &Output) {
    assert!(
        o.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn bad_config_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let conf = tiny_config(dir.path(), "bogus_key = 1\n");
    let o = pathnas(&["gen-data", "--config", s(&conf), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus_key"));
}

#[test]
fn degenerate_genotype_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let conf = tiny_config(dir.path(), "");
    let g = dir.path().join("g.json");
    fs::write(&g, r#"{"n":1,"edges":[{"src":0,"dst":1,"path":"none"}]}"#).unwrap();
    let o = pathnas(&[
        "full-train",
        "--config",
        s(&conf),
        "--genotype",
        s(&g),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(
        o.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn divergence_exits_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let conf = tiny_config(dir.path(), "lr = 1e6\nfull_train_epochs = 3\n");
    let g = dir.path().join("g.json");
    fs::write(
        &g,
        r#"{"n":1,"edges":[{"src":0,"dst":1,"path":"top_down"}]}"#,
    )
    .unwrap();
    let o = pathnas(&[
        "full-train",
        "--config",
        s(&conf),
        "--genotype",
        s(&g),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn gen_data_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let conf = tiny_config(dir.path(), "");
    let run = |seed: &str, out: &str| {
        let out = dir.path().join(out);
        assert_ok(&pathnas(&[
            "gen-data",
            "--config",
            s(&conf),
            "--seed",
            seed,
            "--out",
            s(&out),
        ]));
        fs::read(out.join("dataset.ckpt")).unwrap()
    };
    let a = run("5", "a");
    assert_eq!(a, run("5", "b"));
    assert_ne!(a, run("6", "c"));
}

#[test]
fn staged_commands_chain_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let conf = tiny_config(d, "");
    let out = d.join("out");
    let common = ["--config", s(&conf), "--seed", "3", "--out", s(&out)];
    let with = |cmd: &str, extra: &[&str]| {
        let mut args = vec![cmd];
        args.extend_from_slice(&common);
        args.extend_from_slice(extra);
        let o = pathnas(&args);
        assert_ok(&o);
        o
    };
    with("gen-data", &[]);
    let data = out.join("dataset.ckpt");
    with("train-supernet", &["--data", s(&data)]);
    let supernet = out.join("supernet.ckpt");
    assert!(out.join("supernet_log.csv").exists());

    with("search", &["--data", s(&data), "--supernet", s(&supernet)]);
    let winner = fs::read_to_string(out.join("winner.json")).unwrap();
    let state = out.join("search_state.json");
    let resumed_out = d.join("resumed");
    let o = pathnas(&[
        "search",
        "--config",
        s(&conf),
        "--seed",
        "3",
        "--out",
        s(&resumed_out),
        "--data",
        s(&data),
        "--supernet",
        s(&supernet),
        "--resume",
        s(&state),
    ]);
    assert_ok(&o);
    assert_eq!(
        fs::read_to_string(resumed_out.join("winner.json")).unwrap(),
        winner
    );

    with(
        "random-baseline",
        &[
            "--data",
            s(&data),
            "--supernet",
            s(&supernet),
            "--budget",
            "3",
        ],
    );
    assert_eq!(
        fs::read_to_string(out.join("random_search.csv"))
            .unwrap()
            .lines()
            .count(),
        4
    );
    with(
        "full-train",
        &[
            "--data",
            s(&data),
            "--genotype",
            s(&out.join("winner.json")),
        ],
    );
    assert!(out.join("full_train.json").exists());
}

#[test]
fn pipeline_is_byte_reproducible_and_plot_data_regenerates() {
    let dir = tempfile::tempdir().unwrap();
    let conf = tiny_config(dir.path(), "");
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = pathnas(&[
            "pipeline",
            "--config",
            s(&conf),
            "--seed",
            "1",
            "--out",
            s(&out),
        ]);
        assert_ok(&o);
        (out, o.stdout)
    };
    let (a, stdout_a) = run("a");
    let (b, stdout_b) = run("b");
    assert_eq!(stdout_a, stdout_b);
    let mut names: Vec<_> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.iter().any(|n| n == "report.json"));
    for n in &names {
        assert_eq!(
            fs::read(a.join(n)).unwrap(),
            fs::read(b.join(n)).unwrap(),
            "{n:?}"
        );
    }

    let plots = dir.path().join("plots");
    assert_ok(&pathnas(&[
        "plot-data",
        "--report",
        s(&a.join("report.json")),
        "--out",
        s(&plots),
    ]));
    let dats: Vec<_> = fs::read_dir(&plots)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert!(!dats.is_empty());
    for n in dats {
        assert_eq!(
            fs::read(plots.join(&n)).unwrap(),
            fs::read(a.join(&n)).unwrap(),
            "{n:?}"
        );
    }
}

#[test]
fn experiment_commands_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let conf = tiny_config(dir.path(), "");
    for (cmd, file) in [
        ("correlate", "correlation.csv"),
        ("ablate-gamma", "ablation.dat"),
    ] {
        let run = |name: &str| {
            let out = dir.path().join(format!("{cmd}-{name}"));
            let mut args = vec![cmd, "--config", s(&conf), "--out", s(&out)];
            if cmd == "correlate" {
                args.extend(["--variants", "dense,dense_fair_gamma"]);
            }
            assert_ok(&pathnas(&args));
            fs::read(out.join(file)).unwrap()
        };
        assert_eq!(run("a"), run("b"), "{cmd}");
    }
}
