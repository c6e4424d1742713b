use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use splatmo::gradients::{CheckProblem, CheckSetup, ParamBlock};
use splatmo::io::{
    load_checkpoint, load_dataset, read_json, read_trajectory, save_checkpoint, save_dataset, write_json, write_loss_csv,
    write_metrics_csv, Dataset, Split,
};
use splatmo::optimizer::{eval_optimize, start_scene, train_with, EvalRecord, RunConfig, TrainState};
use splatmo::rasterizer::render_frame;
use splatmo::scene::Scene;
use splatmo::simkit::{eval_split, frame_blur_score, keyframe_filter, landmarks, simulate_sequence, SimSpec};
use splatmo::{Error, Result};

use crate::{
    BlurScoreArgs, Command, EvalArgs, FdCheckArgs, RenderArgs, SimulateArgs, TrainArgs, EXIT_NUMERICAL, EXIT_OK,
};

pub(crate) fn run(command: Command) -> Result<i32> {
    match command {
        Command::Simulate(a) => simulate(a),
        Command::Train(a) => train(a),
        Command::Render(a) => render(a),
        Command::Eval(a) => eval(a),
        Command::BlurScore(a) => blur_score(a),
        Command::FdCheck(a) => return fd_check(a).map(|ok| if ok { EXIT_OK } else { EXIT_NUMERICAL }),
    }
    .map(|()| EXIT_OK)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let cfg = match path {
        Some(p) => read_json(p)?,
        None => RunConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let mut spec: SimSpec = match &a.spec {
        Some(p) => read_json(p)?,
        None => SimSpec::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => { $( if let Some(v) = a.$field { spec.$field = v; } )* };
    }
    set!(recipe, variant, seed, trajectory, speed, exposure, readout, n_train, n_eval, width, height);
    if a.n_splats.is_some() {
        spec.n_splats = a.n_splats;
    }
    if a.init_noise {
        spec.init_noise = true;
    }
    let dataset = simulate_sequence(&spec)?;
    save_dataset(&dataset, &a.out)?;
    info!(
        "wrote {} frames ({} eval) to {}",
        dataset.len(),
        dataset.eval_indices().len(),
        a.out.display()
    );
    Ok(())
}

fn checkpoint_dir(out: &Path, name: &str) -> PathBuf {
    out.join("checkpoints").join(name)
}

fn write_renders(state: &TrainState, cfg: &RunConfig, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    let render_cfg = cfg.model_render();
    for i in 0..state.frames.len() {
        let split = if state.is_eval[i] { Split::Eval } else { Split::Train };
        let img = render_frame(&state.scene, &state.model_frame(i, cfg), &state.intrinsics, &render_cfg)?;
        img.write_png(&dir.join(format!("{}_{i:04}.png", split.dir())))?;
    }
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(n) = a.iterations {
        cfg.iterations = n;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let input = a
        .input
        .or_else(|| cfg.dataset.clone())
        .ok_or_else(|| Error::InvalidArgument("train needs a dataset (-i or \"dataset\" in the config)".into()))?;
    let out = a
        .out
        .or_else(|| cfg.output.clone())
        .ok_or_else(|| Error::InvalidArgument("train needs an output directory (-o or \"output\" in the config)".into()))?;
    let dataset = load_dataset(&input)?;
    let mut state = match &a.resume {
        Some(dir) => load_checkpoint(dir, dataset.images.clone(), &cfg)?,
        None => {
            let seed_scene = dataset.scene.as_ref().ok_or_else(|| {
                Error::InvalidArgument(format!("dataset {} has no scene.json to start from", input.display()))
            })?;
            TrainState::new(
                start_scene(seed_scene, &cfg)?,
                dataset.init.clone(),
                dataset.is_eval(),
                dataset.images.clone(),
                dataset.intrinsics,
                &cfg,
            )?
        }
    };
    create_dir(&out)?;
    write_json(&out.join("config.json"), &cfg)?;

    let remaining = cfg.iterations.saturating_sub(state.iteration as usize);
    let mut metrics: Vec<EvalRecord> = Vec::new();
    let curve = train_with(&mut state, &cfg, remaining, |s, rec| {
        let it = s.iteration as usize;
        if cfg.metrics_every > 0 && it % cfg.metrics_every == 0 {
            let recs = s.evaluate(&cfg)?;
            if let Some(mean) = mean_psnr(&recs) {
                info!("iteration {it}: loss {:.5}, eval PSNR {mean:.2} dB", rec.loss);
            }
            metrics.extend(recs);
        }
        if cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0 {
            save_checkpoint(s, &checkpoint_dir(&out, &format!("{it:06}")))?;
        }
        Ok(())
    })?;
    write_loss_csv(&out.join("loss.csv"), &curve)?;
    save_checkpoint(&state, &checkpoint_dir(&out, "final"))?;

    if !state.eval_indices().is_empty() {
        eval_optimize(&mut state, &cfg, cfg.eval_iterations)?;
        let recs = state.evaluate(&cfg)?;
        if let Some(mean) = mean_psnr(&recs) {
            info!("final eval PSNR {mean:.2} dB after registering evaluation frames");
        }
        metrics.extend(recs);
    } else {
        warn!("dataset has no evaluation frames; metrics.csv will be empty");
    }
    write_metrics_csv(&out.join("metrics.csv"), &metrics)?;
    write_renders(&state, &cfg, &out.join("renders"))
}

fn mean_psnr(recs: &[EvalRecord]) -> Option<f64> {
    (!recs.is_empty()).then(|| recs.iter().map(|r| r.psnr).sum::<f64>() / recs.len() as f64)
}

fn render(a: RenderArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let scene: Scene = read_json(&a.scene)?;
    scene.validate()?;
    let (k, splits, frames) = read_trajectory(&a.trajectory)?.into_parts()?;
    create_dir(&a.out)?;
    let render_cfg = cfg.model_render();
    for (i, (fm, split)) in frames.iter().zip(&splits).enumerate() {
        let img = render_frame(&scene, &cfg.model_frame(fm), &k, &render_cfg)?;
        img.write_png(&a.out.join(format!("{}_{i:04}.png", split.dir())))?;
    }
    info!("rendered {} frames to {}", frames.len(), a.out.display());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let dataset = load_dataset(&a.input)?;
    let mut state = load_checkpoint(&a.checkpoint, dataset.images.clone(), &cfg)?;
    if state.eval_indices().is_empty() {
        return Err(Error::InvalidArgument("checkpoint has no evaluation frames".into()));
    }
    if a.fixed_gaussians {
        let before = state.scene.param_hash();
        eval_optimize(&mut state, &cfg, a.iterations.unwrap_or(cfg.eval_iterations))?;
        if state.scene.param_hash() != before {
            return Err(Error::Numerical("scene changed during fixed-scene evaluation".into()));
        }
    }
    let recs = state.evaluate(&cfg)?;
    match &a.out {
        Some(dir) => {
            create_dir(dir)?;
            write_metrics_csv(&dir.join("metrics.csv"), &recs)?;
            write_renders(&state, &cfg, &dir.join("renders"))?;
        }
        None => print!("{}", splatmo::io::metrics_csv(&recs)),
    }
    if let Some(mean) = mean_psnr(&recs) {
        info!("mean eval PSNR {mean:.2} dB");
    }
    Ok(())
}

/// One line of `blur-score` output.
#[derive(Debug, Clone, PartialEq)]
pub struct BlurRow {
    pub frame: usize,
    /// Mean landmark image speed in pixels per second.
    pub score: f64,
    /// `keyframe`, `dropped`, or the chosen split of a kept keyframe.
    pub role: &'static str,
}

/// Score every frame, drop blurry keyframe candidates and split the rest.
pub fn blur_score_rows(dataset: &Dataset, truth: bool) -> Result<Vec<BlurRow>> {
    let scene = dataset
        .scene
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("blur-score needs scene.json for landmarks".into()))?;
    let points = landmarks(scene);
    let frames = if truth { &dataset.truth } else { &dataset.init };
    let scores = frames
        .iter()
        .map(|f| frame_blur_score(f, &points, &dataset.intrinsics))
        .collect::<Result<Vec<f64>>>()?;
    let kept = keyframe_filter(&scores);
    let mut rows: Vec<BlurRow> = scores
        .iter()
        .enumerate()
        .map(|(frame, &score)| BlurRow {
            frame,
            score,
            role: "dropped",
        })
        .collect();
    if !kept.is_empty() {
        let kept_scores: Vec<f64> = kept.iter().map(|&i| scores[i]).collect();
        let (train, eval) = eval_split(&kept_scores)?;
        for j in train {
            rows[kept[j]].role = "train";
        }
        for j in eval {
            rows[kept[j]].role = "eval";
        }
    }
    Ok(rows)
}

/// CSV text with header `frame,score,role`.
pub fn blur_score_csv(rows: &[BlurRow]) -> String {
    let mut s = String::from("frame,score,role\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.frame, r.score, r.role);
    }
    s
}

fn blur_score(a: BlurScoreArgs) -> Result<()> {
    let dataset = load_dataset(&a.input)?;
    let csv = blur_score_csv(&blur_score_rows(&dataset, a.truth)?);
    match &a.out {
        Some(p) => write_text(p, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn fd_check(a: FdCheckArgs) -> Result<bool> {
    let setup = CheckSetup {
        n_splats: a.splats,
        width: a.size,
        height: a.size,
        n_blur: a.n_blur,
        ..Default::default()
    };
    let problem = CheckProblem::random(a.seed, &setup)?;
    let grads = problem.gradients()?;
    let blocks: Vec<ParamBlock> = match a.block {
        Some(b) => vec![b],
        None => ParamBlock::ALL.to_vec(),
    };
    let mut all_ok = true;
    println!("block,rel_error,tolerance,checked,skipped,result");
    for block in blocks {
        let r = problem.check_with(&grads, block, &problem.fd_options(block));
        let ok = r.passed(block.tolerance());
        all_ok &= ok;
        println!(
            "{block},{:.3e},{:.0e},{},{},{}",
            r.rel_error,
            block.tolerance(),
            r.n_checked,
            r.n_skipped,
            if ok { "pass" } else { "FAIL" }
        );
    }
    Ok(all_ok)
}
