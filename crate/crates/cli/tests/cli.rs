//! Command-level behavior: exit codes, file outputs, overrides.

use formagen::planner::{ChatMessage, ChatTranscript};
use formagen_cli::{cmd_compare, cmd_generate, cmd_plan, RunConfig};
use std::path::Path;
use std::process::Command;

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_formagen"))
}

fn short_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("config.json");
    std::fs::write(
        &path,
        r#"{"total_length_s": 15.0, "transition_s": 2.0, "audio_prompt_s": 3.0, "audio_fade_s": 2.0}"#,
    )
    .unwrap();
    path
}

fn short_run_config(dir: &Path) -> RunConfig {
    RunConfig {
        total_length_s: 15.0,
        transition_s: 2.0,
        audio_prompt_s: 3.0,
        audio_fade_s: 2.0,
        out_dir: dir.to_path_buf(),
        ..RunConfig::default()
    }
}

const SHORT_PLAN: &str = r#"{"1": ["airy intro", 5, null], "2": ["dense middle", 5, null], "3": ["airy intro", 5, 1]}"#;

#[test]
fn generate_writes_tokens_and_wav() {
    let dir = tempfile::tempdir().unwrap();
    let plan_path = dir.path().join("piece.json");
    std::fs::write(&plan_path, SHORT_PLAN).unwrap();

    let config = short_run_config(dir.path());
    let outcome = cmd_generate(&config, &plan_path).unwrap();
    assert_eq!(outcome.token_count, 150); // 15 s at 10 steps/s
    let token_path = outcome.token_path.unwrap();
    assert!(token_path.exists());
    assert!(outcome.wav_path.exists());

    let (tokens, vocab) = formagen::sampler::read_token_file(&token_path).unwrap();
    assert_eq!(vocab, 64);
    assert_eq!(tokens.tokens.len(), 150);

    let audio = formagen::synth::read_wav(&outcome.wav_path).unwrap();
    assert!((audio.duration_s() - 15.0).abs() < 0.1);
}

#[test]
fn generate_is_deterministic_across_processes() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = short_config(dir.path());
    let plan_path = dir.path().join("piece.json");
    std::fs::write(&plan_path, SHORT_PLAN).unwrap();

    let mut bytes = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let status = binary()
            .args(["--config", config_path.to_str().unwrap()])
            .args(["--seed", "42"])
            .args(["--out", out.to_str().unwrap()])
            .arg("generate")
            .arg(&plan_path)
            .status()
            .unwrap();
        assert!(status.success());
        bytes.push(std::fs::read(out.join("piece.fgtk")).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
}

#[test]
fn invalid_plan_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = short_config(dir.path());
    let plan_path = dir.path().join("bad.json");
    // Sums to 14, not 15.
    std::fs::write(&plan_path, r#"{"1": ["a", 7, null], "2": ["b", 7, null]}"#).unwrap();

    let output = binary()
        .args(["--config", config_path.to_str().unwrap()])
        .args(["--out", dir.path().join("out").to_str().unwrap()])
        .arg("generate")
        .arg(&plan_path)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("total length 14 ≠ 15"), "{}", stderr);
}

#[test]
fn transition_longer_than_part_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = short_config(dir.path());
    let plan_path = dir.path().join("tight.json");
    // Shortest part (1 s) is below the 2 s transition.
    std::fs::write(&plan_path, r#"{"1": ["a", 1, null], "2": ["b", 14, null]}"#).unwrap();

    let output = binary()
        .args(["--config", config_path.to_str().unwrap()])
        .args(["--out", dir.path().join("out").to_str().unwrap()])
        .arg("generate")
        .arg(&plan_path)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn evaluate_empty_dir_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let output = binary()
        .args(["--out", dir.path().join("out").to_str().unwrap()])
        .arg("evaluate")
        .arg(&empty)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn evaluate_writes_matrices_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let audio_dir = dir.path().join("audio");
    std::fs::create_dir(&audio_dir).unwrap();

    let config = RunConfig {
        out_dir: audio_dir.clone(),
        ..short_run_config(dir.path())
    };
    for (name, seed) in [("one", 1u64), ("two", 2u64)] {
        let plan_path = dir.path().join(format!("{}.json", name));
        std::fs::write(&plan_path, SHORT_PLAN).unwrap();
        let mut c = config.clone();
        c.seed = seed;
        cmd_generate(&c, &plan_path).unwrap();
    }
    // A junk file that must be skipped with a warning, not kill the run.
    std::fs::write(audio_dir.join("broken.wav"), b"not a wav at all").unwrap();

    let out = dir.path().join("eval");
    let output = binary()
        .args(["--out", out.to_str().unwrap()])
        .arg("evaluate")
        .arg(&audio_dir)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("skipping broken"), "{}", stderr);

    for stem in ["one", "two"] {
        assert!(out.join(format!("{}_fused.csv", stem)).exists());
        assert!(out.join(format!("{}_fused.pgm", stem)).exists());
        assert!(out.join(format!("{}_5x5.csv", stem)).exists());
    }
    assert!(out.join("mean.csv").exists());
    assert!(out.join("variance.csv").exists());
}

#[test]
fn evaluate_single_file_gives_zero_variance() {
    let dir = tempfile::tempdir().unwrap();
    let audio_dir = dir.path().join("audio");
    std::fs::create_dir(&audio_dir).unwrap();

    let config = RunConfig {
        out_dir: audio_dir.clone(),
        ..short_run_config(dir.path())
    };
    let plan_path = dir.path().join("solo.json");
    std::fs::write(&plan_path, SHORT_PLAN).unwrap();
    cmd_generate(&config, &plan_path).unwrap();
    std::fs::remove_file(audio_dir.join("solo.fgtk")).unwrap();

    let out_config = RunConfig {
        out_dir: dir.path().join("eval"),
        ..RunConfig::default()
    };
    let outcome = formagen_cli::cmd_evaluate(&out_config, &audio_dir).unwrap();
    assert_eq!(outcome.evaluated.len(), 1);
    let variance = std::fs::read_to_string(outcome.variance_path).unwrap();
    for cell in variance.split([',', '\n']).filter(|c| !c.is_empty()) {
        assert_eq!(cell.parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn compare_directory_with_itself_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let audio_dir = dir.path().join("audio");
    std::fs::create_dir(&audio_dir).unwrap();

    let config = RunConfig {
        out_dir: audio_dir.clone(),
        ..short_run_config(dir.path())
    };
    for (name, seed) in [("one", 1u64), ("two", 2u64)] {
        let plan_path = dir.path().join(format!("{}.json", name));
        std::fs::write(&plan_path, SHORT_PLAN).unwrap();
        let mut c = config.clone();
        c.seed = seed;
        cmd_generate(&c, &plan_path).unwrap();
    }

    let out_config = RunConfig {
        out_dir: dir.path().join("out"),
        ..RunConfig::default()
    };
    let outcome = cmd_compare(&out_config, &audio_dir, &audio_dir).unwrap();
    assert!(outcome.distance <= 1e-8, "self distance {}", outcome.distance);
    assert!(outcome.report_path.exists());
}

#[test]
fn compare_single_file_dirs_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    std::fs::create_dir_all(&a).unwrap();
    std::fs::create_dir_all(&b).unwrap();

    let config = RunConfig {
        out_dir: a.clone(),
        ..short_run_config(dir.path())
    };
    let plan_path = dir.path().join("p.json");
    std::fs::write(&plan_path, SHORT_PLAN).unwrap();
    cmd_generate(&config, &plan_path).unwrap();
    let config_b = RunConfig { out_dir: b.clone(), ..config };
    cmd_generate(&config_b, &plan_path).unwrap();

    let output = binary()
        .args(["--out", dir.path().join("out").to_str().unwrap()])
        .arg("compare")
        .arg(&a)
        .arg(&b)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

fn plan_fixture(dir: &Path, pieces: &[String]) -> std::path::PathBuf {
    let transcript = ChatTranscript(vec![
        ChatMessage::user("instruction"),
        ChatMessage::assistant("Ten described pieces."),
        ChatMessage::user("followup"),
        ChatMessage::assistant(pieces.join("\n")),
    ]);
    let path = dir.join("fixture.json");
    transcript.save(&path).unwrap();
    path
}

#[test]
fn plan_from_fixture_writes_plan_files() {
    let dir = tempfile::tempdir().unwrap();
    let pieces: Vec<String> = (0..10)
        .map(|i| {
            format!(
                "{{\"1\": [\"opening {i}\", 50, null], \"2\": [\"contrast {i}\", 50, null], \
                 \"3\": [\"reprise {i}\", 50, 1]}}"
            )
        })
        .collect();
    let fixture = plan_fixture(dir.path(), &pieces);

    let out = dir.path().join("plans");
    let config = RunConfig {
        out_dir: out.clone(),
        ..RunConfig::default()
    };
    let outcome = cmd_plan(&config, Some("calm study set"), Some(&fixture)).unwrap();
    assert_eq!(outcome.plan_paths.len(), 10);
    assert!(out.join("plan_01.json").exists());
    assert!(out.join("plan_10.json").exists());
    assert!(out.join("transcript.json").exists());

    // Written plans parse and validate.
    for path in &outcome.plan_paths {
        let text = std::fs::read_to_string(path).unwrap();
        let plan = formagen::form_plan::parse_plan(&text).unwrap();
        assert!(formagen::form_plan::validate_plan(&plan, &config.plan_constraints()).is_empty());
    }
}

#[test]
fn plan_respects_pieces_limit() {
    let dir = tempfile::tempdir().unwrap();
    let pieces: Vec<String> = (0..10)
        .map(|i| format!("{{\"1\": [\"solo piece {i}\", 150, null]}}"))
        .collect();
    let fixture = plan_fixture(dir.path(), &pieces);

    let out = dir.path().join("plans");
    let status = binary()
        .args(["--out", out.to_str().unwrap()])
        .arg("plan")
        .args(["--pieces", "3"])
        .args(["--fixture", fixture.to_str().unwrap()])
        .status()
        .unwrap();
    assert!(status.success());
    let count = std::fs::read_dir(&out)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().starts_with("plan_"))
        .count();
    assert!(count <= 3, "{} plan files", count);
}

#[test]
fn plan_with_unfixable_fixture_exits_2_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let bad = "{\"1\": [\"wrong total\", 10, null]}".to_string();
    let transcript = ChatTranscript(vec![
        ChatMessage::user("instruction"),
        ChatMessage::assistant("One piece."),
        ChatMessage::user("followup"),
        ChatMessage::assistant(bad.clone()),
        ChatMessage::user("correction"),
        ChatMessage::assistant(bad.clone()),
        ChatMessage::user("correction"),
        ChatMessage::assistant(bad.clone()),
        ChatMessage::user("correction"),
        ChatMessage::assistant(bad),
    ]);
    let fixture = dir.path().join("fixture.json");
    transcript.save(&fixture).unwrap();

    let out = dir.path().join("plans");
    let output = binary()
        .args(["--out", out.to_str().unwrap()])
        .arg("plan")
        .args(["--fixture", fixture.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(!out.join("plan_01.json").exists());
}
