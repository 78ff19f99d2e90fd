//! The four pipeline commands: plan acquisition, token generation + audio
//! rendering, corpus evaluation, and corpus comparison.

use crate::{CliError, RunConfig};
use formagen::form_plan::{compile_schedule, parse_plan, serialize_plan, validate_plan};
use formagen::planner::{
    request_plans, ChatClient, HttpChatClient, PlannerConfig, ReplayClient,
};
use formagen::sampler::{generate_tokens, write_token_file, ToyTokenModel};
use formagen::structure_eval::{
    corpus_stats, evaluate_track, frechet_distance, gaussian_summary, upper_triangle_vec,
    write_matrix_csv, write_matrix_pgm, EvalParams, TrackEval,
};
use formagen::synth::{read_wav, remote_generate, render_tokens, write_wav, AudioBuffer, BackendKind};
use rayon::prelude::*;
use std::path::{Path, PathBuf};

pub struct PlanOutcome {
    pub plan_paths: Vec<PathBuf>,
    pub transcript_path: PathBuf,
    pub rejected: usize,
}

pub struct GenerateOutcome {
    pub token_path: Option<PathBuf>,
    pub wav_path: PathBuf,
    pub token_count: usize,
    pub duration_s: f64,
}

pub struct EvaluateOutcome {
    pub evaluated: Vec<String>,
    pub skipped: Vec<String>,
    pub mean_path: PathBuf,
    pub variance_path: PathBuf,
}

pub struct CompareOutcome {
    pub distance: f64,
    pub count_a: usize,
    pub count_b: usize,
    pub report_path: PathBuf,
}

fn ensure_out_dir(config: &RunConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(&config.out_dir)
        .map_err(|e| CliError::Input(format!("cannot create {}: {}", config.out_dir.display(), e)))
}

/// Requests plans from the LLM (or a replay fixture) and writes each valid
/// plan as `plan_NN.json` plus the full `transcript.json`.
pub fn cmd_plan(
    config: &RunConfig,
    brief: Option<&str>,
    fixture: Option<&Path>,
) -> Result<PlanOutcome, CliError> {
    config.validate()?;

    let client: Box<dyn ChatClient> = match fixture {
        Some(path) => Box::new(ReplayClient::from_file(path)?),
        None => Box::new(
            HttpChatClient::from_env(config.timeout_s)
                .map_err(|e| CliError::Input(format!("no usable LLM endpoint: {}", e)))?,
        ),
    };

    let mut planner_config = PlannerConfig::for_total_length(config.total_length_s);
    planner_config.pieces_requested = config.pieces;
    planner_config.constraints = config.plan_constraints();
    if let Some(brief) = brief {
        if !brief.trim().is_empty() {
            planner_config
                .rule_texts
                .push(format!("Theme brief for all pieces: {}", brief.trim()));
        }
    }

    let result = request_plans(client.as_ref(), &planner_config)?;

    ensure_out_dir(config)?;
    let mut plan_paths = Vec::new();
    for (i, plan) in result.plans.iter().take(config.pieces).enumerate() {
        let path = config.out_dir.join(format!("plan_{:02}.json", i + 1));
        std::fs::write(&path, serialize_plan(plan)).map_err(CliError::io_input)?;
        plan_paths.push(path);
    }
    let transcript_path = config.out_dir.join("transcript.json");
    result.raw_transcript.save(&transcript_path)?;

    for (raw, violations) in &result.rejected {
        eprintln!(
            "warning: rejected plan candidate ({}): {}",
            violations.join("; "),
            raw.chars().take(60).collect::<String>()
        );
    }
    println!(
        "wrote {} plan file(s) and {}",
        plan_paths.len(),
        transcript_path.display()
    );

    Ok(PlanOutcome {
        plan_paths,
        transcript_path,
        rejected: result.rejected.len(),
    })
}

/// Generates tokens for one plan and renders them to audio. The toy backend
/// emits `<stem>.fgtk` and `<stem>.wav`; a remote backend emits only the
/// WAV, stitched part by part with audio-prompt continuations.
pub fn cmd_generate(config: &RunConfig, plan_path: &Path) -> Result<GenerateOutcome, CliError> {
    config.validate()?;
    let text = std::fs::read_to_string(plan_path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {}", plan_path.display(), e)))?;
    let plan = parse_plan(&text)?;

    let violations = validate_plan(&plan, &config.plan_constraints());
    if !violations.is_empty() {
        return Err(CliError::Input(format!(
            "plan {} is invalid: {}",
            plan_path.display(),
            violations.join("; ")
        )));
    }

    let stem = plan_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("piece")
        .to_string();
    ensure_out_dir(config)?;

    match config.backend_kind()? {
        BackendKind::Toy => {
            let frame_rate = config.effective_frame_rate();
            let schedule = compile_schedule(
                &plan,
                frame_rate,
                config.transition_s,
                config.audio_prompt_s,
                config.audio_fade_s,
            )?;
            let model = ToyTokenModel::with_default_table(config.vocabulary_size);
            let tokens = generate_tokens(&model, &schedule, &config.sampler_params())?;

            let token_path = config.out_dir.join(format!("{}.fgtk", stem));
            write_token_file(&token_path, &tokens, config.vocabulary_size as u32)?;

            let audio = render_tokens(&tokens, config.sample_rate)?;
            let wav_path = config.out_dir.join(format!("{}.wav", stem));
            write_wav(&audio, &wav_path)?;

            println!(
                "generated {} tokens ({:.1} s) -> {} / {}",
                tokens.tokens.len(),
                tokens.duration_s(),
                token_path.display(),
                wav_path.display()
            );
            Ok(GenerateOutcome {
                token_path: Some(token_path),
                wav_path,
                token_count: tokens.tokens.len(),
                duration_s: tokens.duration_s(),
            })
        }
        BackendKind::Remote => {
            let backend = config.backend_descriptor()?;
            let mut part_audio: Vec<AudioBuffer> = Vec::with_capacity(plan.parts.len());
            for part in &plan.parts {
                let continuation = part.referenced_part.map(|r| {
                    let source = &part_audio[(r - 1) as usize];
                    let take = ((config.audio_prompt_s * source.sample_rate as f64) as usize)
                        .min(source.samples.len());
                    AudioBuffer {
                        sample_rate: source.sample_rate,
                        samples: source.samples[source.samples.len() - take..].to_vec(),
                    }
                });
                let audio =
                    remote_generate(&backend, &part.prompt, part.length_s, continuation.as_ref())?;
                part_audio.push(audio);
            }

            let sample_rate = part_audio[0].sample_rate;
            let mut samples = Vec::new();
            for a in &part_audio {
                if a.sample_rate != sample_rate {
                    return Err(CliError::Backend(format!(
                        "backend changed sample rate mid-piece: {} then {}",
                        sample_rate, a.sample_rate
                    )));
                }
                samples.extend_from_slice(&a.samples);
            }
            let audio = AudioBuffer {
                sample_rate,
                samples,
            };
            let wav_path = config.out_dir.join(format!("{}.wav", stem));
            write_wav(&audio, &wav_path)?;
            println!(
                "generated {:.1} s remotely -> {}",
                audio.duration_s(),
                wav_path.display()
            );
            Ok(GenerateOutcome {
                token_path: None,
                wav_path,
                token_count: 0,
                duration_s: audio.duration_s(),
            })
        }
    }
}

fn wav_paths_sorted(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| CliError::Input(format!("cannot read {}: {}", dir.display(), e)))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .map(|e| e.eq_ignore_ascii_case("wav"))
                .unwrap_or(false)
        })
        .collect();
    paths.sort();
    Ok(paths)
}

// Evaluates every readable WAV in a directory, in name order; unreadable or
// unevaluable files are reported and skipped.
fn evaluate_dir(dir: &Path) -> Result<(Vec<(String, TrackEval)>, Vec<String>), CliError> {
    let paths = wav_paths_sorted(dir)?;
    if paths.is_empty() {
        return Err(CliError::Input(format!(
            "no WAV files in {}",
            dir.display()
        )));
    }

    let params = EvalParams::default();
    let results: Vec<(String, Result<TrackEval, String>)> = paths
        .par_iter()
        .map(|path| {
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("track")
                .to_string();
            let eval = read_wav(path)
                .map_err(|e| e.to_string())
                .and_then(|audio| evaluate_track(&audio, &params).map_err(|e| e.to_string()));
            (stem, eval)
        })
        .collect();

    let mut evaluated = Vec::new();
    let mut skipped = Vec::new();
    for (stem, result) in results {
        match result {
            Ok(eval) => evaluated.push((stem, eval)),
            Err(reason) => {
                eprintln!("warning: skipping {}: {}", stem, reason);
                skipped.push(stem);
            }
        }
    }
    Ok((evaluated, skipped))
}

/// Evaluates a directory of WAVs: per-file fused SSM (CSV + PGM) and 5×5
/// grid CSV, plus corpus mean/variance CSVs.
pub fn cmd_evaluate(config: &RunConfig, audio_dir: &Path) -> Result<EvaluateOutcome, CliError> {
    let (evaluated, skipped) = evaluate_dir(audio_dir)?;
    if evaluated.is_empty() {
        return Err(CliError::Input(format!(
            "no evaluable WAV files in {}",
            audio_dir.display()
        )));
    }

    ensure_out_dir(config)?;
    for (stem, eval) in &evaluated {
        write_matrix_csv(
            config.out_dir.join(format!("{}_fused.csv", stem)),
            eval.fused.values(),
        )
        .map_err(CliError::io_input)?;
        write_matrix_pgm(
            config.out_dir.join(format!("{}_fused.pgm", stem)),
            eval.fused.values(),
        )
        .map_err(CliError::io_input)?;
        write_matrix_csv(config.out_dir.join(format!("{}_5x5.csv", stem)), &eval.grid)
            .map_err(CliError::io_input)?;
    }

    let grids: Vec<_> = evaluated.iter().map(|(_, e)| e.grid.clone()).collect();
    let stats = corpus_stats(&grids)?;
    let mean_path = config.out_dir.join("mean.csv");
    let variance_path = config.out_dir.join("variance.csv");
    write_matrix_csv(&mean_path, &stats.mean).map_err(CliError::io_input)?;
    write_matrix_csv(&variance_path, &stats.variance).map_err(CliError::io_input)?;

    println!(
        "evaluated {} file(s) ({} skipped) -> {}",
        evaluated.len(),
        skipped.len(),
        config.out_dir.display()
    );
    Ok(EvaluateOutcome {
        evaluated: evaluated.into_iter().map(|(s, _)| s).collect(),
        skipped,
        mean_path,
        variance_path,
    })
}

/// Squared Fréchet distance between the Gaussian summaries of two corpora.
pub fn cmd_compare(
    config: &RunConfig,
    dir_a: &Path,
    dir_b: &Path,
) -> Result<CompareOutcome, CliError> {
    let summarize = |dir: &Path| -> Result<(usize, _), CliError> {
        let (evaluated, _) = evaluate_dir(dir)?;
        if evaluated.len() < 2 {
            return Err(CliError::Input(format!(
                "{} has {} usable file(s); need at least 2",
                dir.display(),
                evaluated.len()
            )));
        }
        let vectors = evaluated
            .iter()
            .map(|(_, e)| upper_triangle_vec(&e.grid))
            .collect::<Result<Vec<_>, _>>()?;
        Ok((evaluated.len(), gaussian_summary(&vectors)?))
    };

    let (count_a, summary_a) = summarize(dir_a)?;
    let (count_b, summary_b) = summarize(dir_b)?;
    let distance = frechet_distance(&summary_a, &summary_b)?;

    ensure_out_dir(config)?;
    let report_path = config.out_dir.join("frechet.txt");
    std::fs::write(&report_path, format!("{:.16e}\n", distance)).map_err(CliError::io_input)?;

    println!(
        "squared Frechet distance ({} vs {} files): {:.6}",
        count_a, count_b, distance
    );
    Ok(CompareOutcome {
        distance,
        count_a,
        count_b,
        report_path,
    })
}
