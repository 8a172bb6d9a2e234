//! Command-line driver: geometry design, state preparation, frame
//! simulation, calibration, reconstruction, evaluation and sweeps.
//!
//! Exit codes: 0 success, 1 error, 2 geometry validation failure.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use pathtomo::density::DensityMatrix;
use pathtomo::geometry::{
    golomb_ruler, plan_measurements, resource_report, validate_geometry, MeasurementPlan,
    PathGeometry,
};
use pathtomo::optics::{pgm, NoiseModel, OpticalConfig};
use pathtomo::pipeline::{reference_settings, simulate_frames};
use pathtomo::prep::{prepare_paper_state, prepare_square_state, PrepSettings};
use pathtomo::reconstruct::{
    calibrate, reconstruct_state, Calibration, FrameSet, ReconstructOptions,
    ReconstructionResult, ReferenceRun,
};

#[derive(Parser)]
#[command(name = "pathtomo", version, about = "Path-encoded qudit tomography toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Geometry design and validity checking.
    Geometry {
        #[command(subcommand)]
        command: GeometryCommand,
    },
    /// Run the preparation optics and write the state and its geometry.
    Prepare(PrepareArgs),
    /// Synthesize the direct and per-angle frames for a state.
    Simulate(SimulateArgs),
    /// Learn phase calibration from two reference runs.
    Calibrate(CalibrateArgs),
    /// Reconstruct a density matrix from a frame directory.
    Reconstruct(ReconstructArgs),
    /// Compare a reconstruction against a known state.
    Evaluate(EvaluateArgs),
    /// prepare + simulate + (calibrate) + reconstruct + evaluate in one run.
    Pipeline(PipelineArgs),
    /// Sweep one preparation angle and tabulate fidelity and purity.
    Sweep(SweepArgs),
}

#[derive(Subcommand)]
enum GeometryCommand {
    /// Print an Erdos-Turan Golomb ruler (d an odd prime).
    GenRuler {
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = 1.0)]
        lmin: f64,
        /// Also write the ruler as a collinear geometry JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0.2)]
        sigma: f64,
    },
    /// Check a geometry file; exit 2 when segments collide.
    Validate {
        geometry: PathBuf,
        /// Also write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the per-angle extraction schedule.
    Plan {
        geometry: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the resource report for a geometry and optics.
    Report {
        geometry: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Args)]
struct PrepareArgs {
    /// Preparation settings JSON; defaults describe the six-path grid.
    #[arg(long)]
    settings: Option<PathBuf>,
    /// Mixer angle in degrees (overrides the settings file).
    #[arg(long)]
    tau: Option<f64>,
    /// Four-path square of this side length instead of the grid pipeline.
    #[arg(long)]
    square: Option<f64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Density-matrix JSON to image.
    #[arg(long)]
    state: PathBuf,
    #[arg(long)]
    geometry: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// none | poisson:<photons>[,read:<sigma>][,bg:<counts>]
    #[arg(long, default_value = "none")]
    noise: String,
    /// Hidden k-origin offset in pixels, to exercise calibration.
    #[arg(long, default_value_t = 0.0)]
    origin_offset: f64,
    /// Write the hidden offset into the frame sidecars.
    #[arg(long)]
    reveal_truth: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "frames")]
    out: PathBuf,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    ref1_state: PathBuf,
    #[arg(long)]
    ref1_frames: PathBuf,
    #[arg(long)]
    ref2_state: PathBuf,
    #[arg(long)]
    ref2_frames: PathBuf,
    #[arg(long)]
    geometry: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    slice_width: usize,
    #[arg(long, default_value = "calibration.json")]
    out: PathBuf,
}

#[derive(Args)]
struct ReconstructArgs {
    /// Directory holding direct.pgm and oft_*.pgm with sidecars.
    #[arg(long)]
    frames: PathBuf,
    #[arg(long)]
    geometry: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    cal: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    slice_width: usize,
    /// Weight diagonal sources by shot-noise estimates.
    #[arg(long)]
    shot_noise_weights: bool,
    #[arg(long, default_value = "result.json")]
    out: PathBuf,
    /// Also write per-pair magnitudes and phases.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Write a DFT magnitude spectrum CSV per slice into this directory.
    #[arg(long)]
    spectra: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    result: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    /// Preparation settings JSON (defaults: the six-path grid).
    #[arg(long)]
    prep: Option<PathBuf>,
    /// Mixer angle in degrees.
    #[arg(long)]
    tau: Option<f64>,
    /// 'maximally-mixed' or a density-matrix JSON file; replaces the
    /// prepared state on the default grid geometry.
    #[arg(long)]
    state: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// none | poisson:<photons>[,read:<sigma>][,bg:<counts>]
    #[arg(long, default_value = "none")]
    noise: String,
    /// Hidden k-origin offset in pixels; nonzero turns on two-reference
    /// calibration.
    #[arg(long, default_value_t = 0.0)]
    origin_offset: f64,
    #[arg(long)]
    reveal_truth: bool,
    /// Slice width override; default 1, or 9 when noise is enabled.
    #[arg(long)]
    slice_width: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "run")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// phi | zeta | omega | tau
    #[arg(long)]
    var: String,
    #[arg(long, default_value_t = 0.0)]
    from: f64,
    #[arg(long, default_value_t = 45.0)]
    to: f64,
    #[arg(long, default_value_t = 5.0)]
    step: f64,
    #[arg(long, default_value = "none")]
    noise: String,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "sweep.csv")]
    out: PathBuf,
}

fn main() {
    if let Ok(threads) = std::env::var("PATHTOMO_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            1
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Geometry { command } => geometry_command(command),
        Command::Prepare(args) => prepare_command(args).map(|_| 0),
        Command::Simulate(args) => simulate_command(args).map(|_| 0),
        Command::Calibrate(args) => calibrate_command(args).map(|_| 0),
        Command::Reconstruct(args) => reconstruct_command(args).map(|_| 0),
        Command::Evaluate(args) => evaluate_command(args).map(|_| 0),
        Command::Pipeline(args) => pipeline_command(args).map(|_| 0),
        Command::Sweep(args) => sweep_command(args).map(|_| 0),
    }
}

fn load_geometry(path: &Path) -> Result<PathGeometry> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading geometry {}", path.display()))?;
    PathGeometry::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_config(path: &Option<PathBuf>) -> Result<OpticalConfig> {
    let cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("reading optics config {}", p.display()))?;
            let cfg: OpticalConfig = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", p.display()))?;
            cfg
        }
        None => OpticalConfig::desk_default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn load_state(path: &Path) -> Result<DensityMatrix> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading state {}", path.display()))?;
    DensityMatrix::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

fn parse_noise(spec: &str) -> Result<NoiseModel> {
    if spec == "none" {
        return Ok(NoiseModel::none());
    }
    let mut model = NoiseModel::none();
    for part in spec.split(',') {
        let (key, value) = part
            .split_once(':')
            .with_context(|| format!("bad noise component '{part}'"))?;
        let value: f64 = value.parse().with_context(|| format!("bad number in '{part}'"))?;
        match key {
            "poisson" => {
                model.poisson = true;
                model.photon_budget = value;
            }
            "read" => model.read_noise_sigma = value,
            "bg" => model.background = value,
            other => bail!("unknown noise component '{other}'"),
        }
    }
    Ok(model)
}

fn geometry_command(command: GeometryCommand) -> Result<i32> {
    match command {
        GeometryCommand::GenRuler { d, lmin, out, sigma } => {
            let positions = golomb_ruler(d, lmin)?;
            let printable: Vec<String> =
                positions.iter().map(|p| format!("{p}")).collect();
            println!("[{}]", printable.join(", "));
            if let Some(path) = out {
                let g = PathGeometry::collinear_y(&positions, sigma)?;
                fs::write(&path, g.to_json())?;
                println!("wrote {}", path.display());
            }
            Ok(0)
        }
        GeometryCommand::Validate { geometry, out } => {
            let g = load_geometry(&geometry)?;
            let report = validate_geometry(&g);
            print!("{report}");
            if let Some(path) = out {
                fs::write(&path, serde_json::to_string_pretty(&report)?)?;
            }
            Ok(if report.pass { 0 } else { 2 })
        }
        GeometryCommand::Plan { geometry, out } => {
            let g = load_geometry(&geometry)?;
            let plan = plan_measurements(&g)?;
            let mut pairs = 0;
            for ap in &plan.angles {
                println!("theta = {:.4} deg", ap.theta_deg);
                for grp in &ap.groups {
                    let members: Vec<String> =
                        grp.members.iter().map(|m| m.to_string()).collect();
                    if grp.pairs.is_empty() {
                        println!(
                            "  x_m = {:+.4} mm: paths [{}] (diagonal)",
                            grp.x_m,
                            members.join(", ")
                        );
                    } else {
                        for p in &grp.pairs {
                            println!(
                                "  x_m = {:+.4} mm: pair ({}, {}) at L = {:.4} mm",
                                grp.x_m, p.i, p.j, p.length_mm
                            );
                            pairs += 1;
                        }
                    }
                }
            }
            println!("{} angles, {} pair entries", plan.angles.len(), pairs);
            if let Some(path) = out {
                fs::write(&path, serde_json::to_string_pretty(&plan)?)?;
            }
            Ok(0)
        }
        GeometryCommand::Report { geometry, config } => {
            let g = load_geometry(&geometry)?;
            let cfg = load_config(&config)?;
            println!("{}", resource_report(&g, &cfg));
            Ok(0)
        }
    }
}

fn prepare_command(args: PrepareArgs) -> Result<()> {
    let (rho, geometry) = if let Some(side) = args.square {
        prepare_square_state(side, args.tau.unwrap_or(0.0))?
    } else {
        let mut settings = match &args.settings {
            Some(path) => PrepSettings::from_json(&fs::read_to_string(path)?)?,
            None => PrepSettings::default(),
        };
        if args.tau.is_some() {
            settings.tau_deg = args.tau;
        }
        prepare_paper_state(&settings)?
    };
    fs::create_dir_all(&args.out)?;
    fs::write(args.out.join("state.json"), rho.to_json())?;
    fs::write(args.out.join("geometry.json"), geometry.to_json())?;
    println!(
        "prepared d = {} state: purity {:.6}, wrote {}",
        rho.dim(),
        rho.purity(),
        args.out.display()
    );
    Ok(())
}

fn write_frames(
    dir: &Path,
    frames: &FrameSet,
    reveal_truth: bool,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    if let Some(direct) = &frames.direct {
        pgm::save_frame(dir, "direct", direct, reveal_truth)?;
    }
    for (i, img) in frames.oft.iter().enumerate() {
        pgm::save_frame(dir, &format!("oft_{i:02}"), img, reveal_truth)?;
    }
    Ok(())
}

fn read_frames(dir: &Path) -> Result<FrameSet> {
    let mut set = FrameSet::default();
    let direct = dir.join("direct.pgm");
    if direct.exists() {
        set.direct = Some(pgm::load_frame(&direct)?);
    }
    let mut oft_paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|e| e == "pgm")
                && p.file_stem().is_some_and(|s| s.to_string_lossy().starts_with("oft_"))
        })
        .collect();
    oft_paths.sort();
    for path in oft_paths {
        set.oft.push(pgm::load_frame(&path)?);
    }
    if set.direct.is_none() && set.oft.is_empty() {
        bail!("no frames found in {}", dir.display());
    }
    Ok(set)
}

fn simulate_command(args: SimulateArgs) -> Result<()> {
    let rho = load_state(&args.state)?;
    let geometry = load_geometry(&args.geometry)?;
    let cfg = load_config(&args.config)?;
    let noise = parse_noise(&args.noise)?;
    let plan = plan_measurements(&geometry)?;
    let frames = simulate_frames(&rho, &plan, &cfg, &noise, args.origin_offset, args.seed)?;
    write_frames(&args.out, &frames, args.reveal_truth)?;
    println!(
        "wrote {} frames ({} angles + direct) to {}",
        frames.oft.len() + 1,
        frames.oft.len(),
        args.out.display()
    );
    Ok(())
}

fn calibrate_command(args: CalibrateArgs) -> Result<()> {
    let geometry = load_geometry(&args.geometry)?;
    let cfg = load_config(&args.config)?;
    let plan = plan_measurements(&geometry)?;
    let opts = ReconstructOptions { slice_width: args.slice_width, shot_noise_weights: false };
    let ref1_known = load_state(&args.ref1_state)?;
    let ref2_known = load_state(&args.ref2_state)?;
    let ref1_frames = read_frames(&args.ref1_frames)?;
    let ref2_frames = read_frames(&args.ref2_frames)?;
    let cal = calibrate(
        &ReferenceRun {
            frames: &ref1_frames,
            known: &ref1_known,
            label: args.ref1_frames.display().to_string(),
        },
        &ReferenceRun {
            frames: &ref2_frames,
            known: &ref2_known,
            label: args.ref2_frames.display().to_string(),
        },
        &plan,
        &cfg,
        &opts,
    )?;
    fs::write(&args.out, cal.to_json())?;
    println!(
        "calibration written to {} (conjugate = {})",
        args.out.display(),
        cal.conjugate
    );
    Ok(())
}

fn reconstruct_command(args: ReconstructArgs) -> Result<()> {
    let geometry = load_geometry(&args.geometry)?;
    let cfg = load_config(&args.config)?;
    let plan = plan_measurements(&geometry)?;
    let cal = match &args.cal {
        Some(path) => Calibration::from_json(&fs::read_to_string(path)?)?,
        None => Calibration::identity(),
    };
    let opts = ReconstructOptions {
        slice_width: args.slice_width,
        shot_noise_weights: args.shot_noise_weights,
    };
    let frames = read_frames(&args.frames)?;
    let result = reconstruct_state(&frames, &plan, &cal, &cfg, &opts)?;
    fs::write(&args.out, result.to_json())?;
    if let Some(csv) = &args.csv {
        fs::write(csv, result.to_csv())?;
    }
    if let Some(dir) = &args.spectra {
        write_spectra(dir, &frames, &plan, &cfg, &opts)?;
    }
    println!(
        "reconstructed d = {}: purity {:.6}, PSD violation {:.3e}, wrote {}",
        result.rho_physical.dim(),
        result.rho_physical.purity(),
        result.diagnostics.psd_violation,
        args.out.display()
    );
    Ok(())
}

/// One magnitude-spectrum CSV per (angle, group) slice, for plotting the
/// peaks the readout extracts.
fn write_spectra(
    dir: &Path,
    frames: &FrameSet,
    plan: &MeasurementPlan,
    cfg: &OpticalConfig,
    opts: &ReconstructOptions,
) -> Result<()> {
    use pathtomo::reconstruct::{amplitude_spectrum, extract_slice};
    fs::create_dir_all(dir)?;
    let max_l = geometry_span(plan) * 1.3;
    let (_, cy) = cfg.center();
    for (fi, frame) in frames.oft.iter().enumerate() {
        let Some(theta) = frame.theta_deg else { continue };
        let Some(ap) = plan
            .angles
            .iter()
            .find(|a| (a.theta_deg - theta).abs() < 1e-6)
        else {
            continue;
        };
        for (gi, grp) in ap.groups.iter().enumerate() {
            let slice = extract_slice(frame, grp.x_m, opts.slice_width)?;
            let mut csv = String::from("ybar_mm,magnitude\n");
            for (l, mag) in amplitude_spectrum(&slice, cy, cfg, max_l, 400) {
                csv.push_str(&format!("{l:.5},{mag:.6e}\n"));
            }
            fs::write(dir.join(format!("spectrum_{fi:02}_{gi}.csv")), csv)?;
        }
    }
    Ok(())
}

fn geometry_span(plan: &MeasurementPlan) -> f64 {
    pathtomo::geometry::segment_table(&plan.geometry)
        .iter()
        .map(|s| s.length_mm)
        .fold(1.0, f64::max)
}

fn load_result_state(path: &Path, key: &str) -> Result<DensityMatrix> {
    let value: serde_json::Value = serde_json::from_str(&fs::read_to_string(path)?)?;
    let sub = value
        .get(key)
        .with_context(|| format!("{} has no '{key}' field", path.display()))?;
    Ok(DensityMatrix::from_json(&sub.to_string())?)
}

fn evaluate_command(args: EvaluateArgs) -> Result<()> {
    let recon = load_result_state(&args.result, "rho_physical")?;
    let raw = load_result_state(&args.result, "rho_raw")?;
    let truth = load_state(&args.truth)?;
    let summary = evaluation_summary(&recon, &raw, &truth)?;
    print!("{}", summary_text(&summary));
    if let Some(path) = &args.out {
        fs::write(path, serde_json::to_string_pretty(&summary_json(&summary))?)?;
    }
    Ok(())
}

struct Summary {
    fidelity: f64,
    purity_recon: f64,
    purity_truth: f64,
    psd_violation_raw: f64,
    max_element_error: f64,
}

fn evaluation_summary(
    recon: &DensityMatrix,
    raw: &DensityMatrix,
    truth: &DensityMatrix,
) -> Result<Summary> {
    let d = recon.dim();
    let mut max_err = 0.0_f64;
    for i in 0..d {
        for j in 0..d {
            max_err = max_err.max((recon.element(i, j) - truth.element(i, j)).norm());
        }
    }
    Ok(Summary {
        fidelity: recon.fidelity(truth)?,
        purity_recon: recon.purity(),
        purity_truth: truth.purity(),
        psd_violation_raw: raw.psd_violation(),
        max_element_error: max_err,
    })
}

fn summary_text(s: &Summary) -> String {
    format!(
        "fidelity: {:.6}\npurity (reconstructed): {:.6}\npurity (truth): {:.6}\nPSD violation (raw): {:.3e}\nmax element error: {:.3e}\n",
        s.fidelity, s.purity_recon, s.purity_truth, s.psd_violation_raw, s.max_element_error
    )
}

fn summary_json(s: &Summary) -> serde_json::Value {
    serde_json::json!({
        "fidelity": s.fidelity,
        "purity_reconstructed": s.purity_recon,
        "purity_truth": s.purity_truth,
        "psd_violation_raw": s.psd_violation_raw,
        "max_element_error": s.max_element_error,
    })
}

fn summary_csv(s: &Summary) -> String {
    let mut out = String::from("metric,value\n");
    out.push_str(&format!("fidelity,{:.9}\n", s.fidelity));
    out.push_str(&format!("purity_reconstructed,{:.9}\n", s.purity_recon));
    out.push_str(&format!("purity_truth,{:.9}\n", s.purity_truth));
    out.push_str(&format!("psd_violation_raw,{:.6e}\n", s.psd_violation_raw));
    out.push_str(&format!("max_element_error,{:.6e}\n", s.max_element_error));
    out
}

fn pipeline_command(args: PipelineArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let noise = parse_noise(&args.noise)?;
    fs::create_dir_all(&args.out)?;

    // Stage 1: the input state and its geometry.
    let mut settings = match &args.prep {
        Some(path) => PrepSettings::from_json(&fs::read_to_string(path)?)?,
        None => PrepSettings::default(),
    };
    if args.tau.is_some() {
        settings.tau_deg = args.tau;
    }
    let (rho_th, geometry) = match args.state.as_deref() {
        None => prepare_paper_state(&settings)?,
        Some("maximally-mixed") => {
            let g = PathGeometry::grid_2x3(settings.sigma_mm);
            (DensityMatrix::maximally_mixed(g.dim()), g)
        }
        Some(path) => {
            let rho = load_state(Path::new(path))?;
            let g = PathGeometry::grid_2x3(settings.sigma_mm);
            if rho.dim() != g.dim() {
                bail!("state dimension {} does not fit the grid", rho.dim());
            }
            (rho, g)
        }
    };
    fs::write(args.out.join("state_theory.json"), rho_th.to_json())?;
    fs::write(args.out.join("geometry.json"), geometry.to_json())?;

    // Stage 2: plan.
    let plan = plan_measurements(&geometry)?;
    fs::write(args.out.join("plan.json"), serde_json::to_string_pretty(&plan)?)?;

    // Stage 3: frames (plus reference runs when calibration is needed).
    let frames = simulate_frames(&rho_th, &plan, &cfg, &noise, args.origin_offset, args.seed)?;
    write_frames(&args.out.join("frames"), &frames, args.reveal_truth)?;

    let slice_width = args
        .slice_width
        .unwrap_or(if noise.is_enabled() { ReconstructOptions::for_noise().slice_width } else { 1 });
    let opts = ReconstructOptions { slice_width, shot_noise_weights: noise.is_enabled() };

    let cal = if args.origin_offset != 0.0 {
        let (sa, sb) = reference_settings();
        let (rho_a, _) = prepare_paper_state(&sa)?;
        let (rho_b, _) = prepare_paper_state(&sb)?;
        let fa = simulate_frames(
            &rho_a,
            &plan,
            &cfg,
            &noise,
            args.origin_offset,
            args.seed.wrapping_add(1_000_001),
        )?;
        let fb = simulate_frames(
            &rho_b,
            &plan,
            &cfg,
            &noise,
            args.origin_offset,
            args.seed.wrapping_add(2_000_002),
        )?;
        write_frames(&args.out.join("frames_ref_a"), &fa, args.reveal_truth)?;
        write_frames(&args.out.join("frames_ref_b"), &fb, args.reveal_truth)?;
        let cal = calibrate(
            &ReferenceRun { frames: &fa, known: &rho_a, label: "ref-a".into() },
            &ReferenceRun { frames: &fb, known: &rho_b, label: "ref-b".into() },
            &plan,
            &cfg,
            &opts,
        )?;
        fs::write(args.out.join("calibration.json"), cal.to_json())?;
        cal
    } else {
        Calibration::identity()
    };

    // Stage 4: reconstruct.
    let result = reconstruct_state(&frames, &plan, &cal, &cfg, &opts)?;
    fs::write(args.out.join("result.json"), result.to_json())?;
    fs::write(args.out.join("readings.csv"), result.to_csv())?;

    // Stage 5: evaluate against the theoretical state.
    let summary = evaluation_summary(&result.rho_physical, &result.rho_raw, &rho_th)?;
    fs::write(args.out.join("summary.csv"), summary_csv(&summary))?;

    let manifest = manifest_json(&args, &noise, &plan, &result);
    fs::write(args.out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;

    print!("{}", summary_text(&summary));
    println!("outputs in {}", args.out.display());
    Ok(())
}

fn manifest_json(
    args: &PipelineArgs,
    noise: &NoiseModel,
    plan: &MeasurementPlan,
    result: &ReconstructionResult,
) -> serde_json::Value {
    serde_json::json!({
        "experiment_id": format!("pipeline-seed-{}", args.seed),
        "geometry_file": "geometry.json",
        "optics_file": args.config.as_ref().map(|p| p.display().to_string()),
        "prep_file": args.prep.as_ref().map(|p| p.display().to_string()),
        "state": args.state,
        "noise": noise,
        "seed": args.seed,
        "angles": plan.angles.len(),
        "frames_used": result.diagnostics.frames_used,
        "calibrated": args.origin_offset != 0.0,
        "origin_offset_px": if args.reveal_truth {
            serde_json::json!(args.origin_offset)
        } else {
            serde_json::Value::Null
        },
        "out_dir": args.out.display().to_string(),
    })
}

fn sweep_command(args: SweepArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let noise = parse_noise(&args.noise)?;
    let opts = if noise.is_enabled() {
        ReconstructOptions::for_noise()
    } else {
        ReconstructOptions::new()
    };
    if args.step <= 0.0 {
        bail!("step must be positive");
    }
    let mut rows = Vec::new();
    let mut angle = args.from;
    let mut index = 0u64;
    while angle <= args.to + 1e-9 {
        // Fixed values follow the sweep protocol: non-varied half-wave
        // plates stay at 22.5 degrees; phi/omega sweeps fix zeta at 45.
        let settings = match args.var.as_str() {
            "phi" => PrepSettings { phi_deg: angle, zeta_deg: 45.0, ..Default::default() },
            "omega" => PrepSettings { omega_deg: angle, zeta_deg: 45.0, ..Default::default() },
            "zeta" => PrepSettings { zeta_deg: angle, ..Default::default() },
            "tau" => PrepSettings { tau_deg: Some(angle), ..Default::default() },
            other => bail!("unknown sweep variable '{other}' (use phi|zeta|omega|tau)"),
        };
        let (rho_th, geometry) = prepare_paper_state(&settings)?;
        let plan = plan_measurements(&geometry)?;
        let frames = simulate_frames(
            &rho_th,
            &plan,
            &cfg,
            &noise,
            0.0,
            args.seed.wrapping_add(index),
        )?;
        let result = reconstruct_state(&frames, &plan, &Calibration::identity(), &cfg, &opts)?;
        let fidelity = result.rho_physical.fidelity(&rho_th)?;
        rows.push((angle, fidelity, result.rho_physical.purity(), rho_th.purity()));
        angle += args.step;
        index += 1;
    }
    let mut csv = String::from("angle_deg,fidelity,purity,theory_purity\n");
    for (a, f, p, tp) in &rows {
        csv.push_str(&format!("{a:.4},{f:.9},{p:.9},{tp:.9}\n"));
    }
    fs::write(&args.out, csv)?;
    println!("swept {} over {} points, wrote {}", args.var, rows.len(), args.out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_spec_parsing() {
        assert!(!parse_noise("none").unwrap().is_enabled());
        let n = parse_noise("poisson:1e4").unwrap();
        assert!(n.poisson && n.photon_budget == 1e4);
        let n = parse_noise("poisson:5000,read:2.5,bg:1").unwrap();
        assert_eq!(n.read_noise_sigma, 2.5);
        assert_eq!(n.background, 1.0);
        assert!(parse_noise("gamma:3").is_err());
        assert!(parse_noise("poisson").is_err());
    }
}
