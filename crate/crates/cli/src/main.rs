use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use speiser_core::classify::{classify, ClassifyOptions, Verdict};
use speiser_core::family::{lookup, FamilySpec};
use speiser_core::landmarks;
use speiser_core::measure::{attractor_disks, estimate_area_with, label_raster, MeasureEstimate};
use speiser_core::numerics::{Rect, C64};
use speiser_core::phase_param::{self as pp, AnnulusTarget, ContinuedPoint, WhitneyDisk};
use speiser_core::report::{to_json_string, Envelope};
use speiser_core::scan::{self, Palette, ScanGrid, ScanMeta, ScanOptions, ScanStatus};
use speiser_core::wiman_valiron as wv;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Parser, Debug)]
#[command(
    name = "speiser-lab",
    version,
    about = "Dynamics laboratory for Speiser-class entire families"
)]
struct Cli {
    #[command(flatten)]
    global: Globals,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand; a `--config` JSON file may set the same
/// keys and the command line wins.
#[derive(Args, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Globals {
    /// Registry id (`exp_lambda`, `zsq_exp`, `zm_exp:5`, ...) or a JSON family file.
    #[arg(long, global = true)]
    family: Option<String>,
    /// Complex parameter: `1.0288`, `3.85i`, `0.3-0.2i` or `re,im`.
    #[arg(long, global = true, allow_hyphen_values = true)]
    param: Option<String>,
    #[arg(long, global = true)]
    budget: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Classify one parameter.
    Classify,
    /// Classify a raster of parameters.
    Scan(ScanArgs),
    /// Hyperbolic fraction in shrinking disks about the parameter.
    Density(DensityArgs),
    /// Monte-Carlo area fractions in phase space.
    Area(AreaArgs),
    /// Tract growth checks and the escape-return sequence.
    WvCheck(WvArgs),
    /// Phase-parameter operations.
    Phase(PhaseArgs),
    /// Solve and classify the three worked parameters.
    Examples,
    /// Render a scan JSON file as a PPM image.
    Render(RenderArgs),
}

#[derive(Args, Debug)]
struct ScanArgs {
    /// Half-side of a square region about the parameter.
    #[arg(long)]
    radius: Option<f64>,
    /// Explicit region `re_min,re_max,im_min,im_max`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, num_args = 4)]
    region: Option<Vec<f64>>,
    #[arg(long, default_value_t = 64)]
    width: u32,
    #[arg(long, default_value_t = 64)]
    height: u32,
    #[arg(long)]
    ppm: Option<PathBuf>,
    /// JSON-lines evidence sidecar (not combined with checkpoints).
    #[arg(long)]
    evidence: Option<PathBuf>,
    /// Stop after this many tiles, leaving the checkpoint for a later resume.
    #[arg(long)]
    stop_after_tiles: Option<usize>,
}

#[derive(Args, Debug)]
struct DensityArgs {
    #[arg(long, value_delimiter = ',', default_value = "1e-2,1e-3,1e-4")]
    radii: Vec<f64>,
    #[arg(long, default_value_t = 64)]
    cells: u32,
}

#[derive(Args, Debug)]
struct AreaArgs {
    /// Phase-space box `re_min,re_max,im_min,im_max`.
    #[arg(
        long = "box",
        value_delimiter = ',',
        allow_hyphen_values = true,
        num_args = 4,
        default_value = "-3,3,-3,3"
    )]
    rect: Vec<f64>,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    /// Also render a square label raster of this width.
    #[arg(long)]
    raster: Option<usize>,
    #[arg(long)]
    ppm: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct WvArgs {
    #[arg(long, default_value_t = 50.0)]
    radius: f64,
    #[arg(long, default_value_t = wv::DEFAULT_TAU)]
    tau: f64,
    #[arg(long, default_value_t = 4.0)]
    alpha: f64,
    #[arg(long, default_value_t = wv::DEFAULT_BETA)]
    beta: f64,
    #[arg(long, default_value_t = 97)]
    probes: usize,
    /// Also build an escape-return sequence with this many growth steps.
    #[arg(long)]
    escape_return: Option<usize>,
    #[arg(long, default_value_t = wv::DEFAULT_START_RADIUS)]
    start_radius: f64,
}

#[derive(Args, Debug)]
struct PhaseArgs {
    /// Singular value index.
    #[arg(long, default_value_t = 0)]
    j: usize,
    /// Landing index `k_j`.
    #[arg(long, default_value_t = 0)]
    k: usize,
    /// Period of the landing point.
    #[arg(long, default_value_t = 1)]
    period: usize,
    /// Landing point at the base parameter; defaults to `f^k(s_j)`.
    #[arg(long, allow_hyphen_values = true)]
    base_point: Option<String>,
    #[command(subcommand)]
    op: PhaseOp,
}

#[derive(Subcommand, Debug)]
enum PhaseOp {
    /// Phase-parameter map value at step n.
    Xi {
        #[arg(long, default_value_t = 0)]
        n: usize,
        /// Offset from the base parameter.
        #[arg(long, default_value = "0", allow_hyphen_values = true)]
        offset: String,
    },
    /// Continue the landing point to an offset parameter in steps.
    Continue {
        #[arg(long, allow_hyphen_values = true)]
        offset: String,
        #[arg(long, default_value_t = 4)]
        steps: usize,
    },
    /// Leading order and coefficient of the separation at the base parameter.
    Transversality {
        #[arg(long, value_delimiter = ',', default_value = "1e-4,1e-5,1e-6")]
        ladder: Vec<f64>,
    },
    /// Compare the parameter derivative with the phase derivative.
    Compare {
        #[arg(long, allow_hyphen_values = true)]
        offset: String,
        /// Defaults to the first step with separation in [1e-4, 1e-2].
        #[arg(long)]
        n: Option<usize>,
    },
    /// Grow a Whitney disk under the map until its image reaches a scale.
    Grow {
        #[arg(long, allow_hyphen_values = true)]
        offset: String,
        #[arg(long, default_value_t = pp::DEFAULT_WHITNEY_K)]
        whitney_k: f64,
        #[arg(long, default_value_t = pp::DEFAULT_SCALE)]
        scale: f64,
        #[arg(long, default_value_t = pp::DEFAULT_NEIGHBORHOOD)]
        neighborhood: f64,
        #[arg(long, default_value_t = 60)]
        max_n: usize,
    },
    /// First step at which images of a seed disk hit every annulus cell.
    Blowup {
        #[arg(long, default_value = "0", allow_hyphen_values = true)]
        seed_center: String,
        #[arg(long, default_value_t = 0.01)]
        seed_radius: f64,
        #[arg(long, default_value = "0", allow_hyphen_values = true)]
        target_center: String,
        #[arg(long, default_value_t = 0.5)]
        r_in: f64,
        #[arg(long, default_value_t = 1.5)]
        r_out: f64,
        #[arg(long, default_value_t = 8)]
        radial: usize,
        #[arg(long, default_value_t = 32)]
        angular: usize,
        #[arg(long, default_value_t = 40)]
        max_n: usize,
        #[arg(long, default_value_t = 300)]
        samples: usize,
    },
}

#[derive(Args, Debug)]
struct RenderArgs {
    /// Scan JSON written by `scan --out`.
    input: PathBuf,
}

struct Settings {
    family: FamilySpec,
    param: C64,
    budget: Option<usize>,
    seed: u64,
    workers: usize,
    out: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
}

fn parse_complex(s: &str) -> Result<C64> {
    let t: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    let num = |x: &str| {
        x.parse::<f64>()
            .with_context(|| format!("bad number {x:?} in {s:?}"))
    };
    if let Some((re, im)) = t.split_once(',') {
        return Ok(C64::new(num(re)?, num(im)?));
    }
    let Some(body) = t.strip_suffix('i').or_else(|| t.strip_suffix('j')) else {
        return Ok(C64::new(num(&t)?, 0.0));
    };
    let bytes = body.as_bytes();
    let split = (1..bytes.len())
        .rev()
        .find(|&i| (bytes[i] == b'+' || bytes[i] == b'-') && !matches!(bytes[i - 1], b'e' | b'E'));
    let imag = |x: &str| match x {
        "" | "+" => Ok(1.0),
        "-" => Ok(-1.0),
        _ => num(x),
    };
    match split {
        Some(i) => Ok(C64::new(num(&body[..i])?, imag(&body[i..])?)),
        None => Ok(C64::new(0.0, imag(body)?)),
    }
}

fn load_family(id: &str) -> Result<FamilySpec> {
    if let Ok(f) = lookup(id) {
        return Ok(f);
    }
    let p = Path::new(id);
    if p.exists() {
        let text = fs::read_to_string(p)?;
        return FamilySpec::from_json(&text).map_err(|e| anyhow!("{e}"));
    }
    bail!("unknown family {id:?}")
}

fn settings(cli: &Globals) -> Result<Settings> {
    let file: Globals = match &cli.config {
        Some(p) => serde_json::from_str(
            &fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        )
        .with_context(|| format!("parsing {}", p.display()))?,
        None => Globals::default(),
    };
    let family = load_family(
        cli.family
            .as_deref()
            .or(file.family.as_deref())
            .unwrap_or("zsq_exp"),
    )?;
    let param = match cli.param.as_deref().or(file.param.as_deref()) {
        Some(s) => parse_complex(s)?,
        None => family.default_param,
    };
    Ok(Settings {
        param,
        budget: cli.budget.or(file.budget),
        seed: cli.seed.or(file.seed).unwrap_or(0),
        workers: cli.workers.or(file.workers).unwrap_or(0),
        out: cli.out.clone().or(file.out),
        checkpoint: cli.checkpoint.clone().or(file.checkpoint),
        family,
    })
}

impl Settings {
    fn classify_options(&self) -> ClassifyOptions {
        let mut o = ClassifyOptions::default();
        if let Some(b) = self.budget {
            o.budget = b;
        }
        o
    }

    fn emit<T: Serialize>(&self, command: &str, result: T) -> Result<()> {
        let text = to_json_string(&Envelope::new(command, result))?;
        match &self.out {
            Some(p) => scan::write_atomic(p, format!("{text}\n").as_bytes())?,
            None => {
                let mut o = std::io::stdout().lock();
                if let Err(e) = writeln!(o, "{text}") {
                    if e.kind() != std::io::ErrorKind::BrokenPipe {
                        return Err(e.into());
                    }
                }
            }
        }
        Ok(())
    }
}

fn rect_of(v: &[f64]) -> Result<Rect> {
    match v {
        [a, b, c, d] => Ok(Rect::new(*a, *b, *c, *d)),
        _ => bail!("expected four numbers re_min,re_max,im_min,im_max"),
    }
}

#[derive(Serialize)]
struct ScanSummary {
    counts: Vec<(String, usize)>,
    grid: ScanGrid,
}

fn summarize(grid: ScanGrid) -> ScanSummary {
    let counts = Verdict::ALL
        .iter()
        .map(|&v| (format!("{v:?}"), grid.count(v)))
        .collect();
    ScanSummary { counts, grid }
}

fn cmd_scan(s: &Settings, a: &ScanArgs) -> Result<()> {
    let region = match (&a.region, a.radius) {
        (Some(r), _) => rect_of(r)?,
        (None, Some(h)) => Rect::centered(s.param, h),
        (None, None) => Rect::centered(s.param, 1e-3),
    };
    let meta = ScanMeta::new(
        s.family.clone(),
        s.param,
        region,
        a.width,
        a.height,
        s.classify_options(),
    );
    let grid = if let Some(ev) = &a.evidence {
        if s.checkpoint.is_some() {
            bail!("--evidence cannot be combined with --checkpoint");
        }
        let (grid, sidecar) = scan::scan_with_evidence(&meta, s.workers)?;
        scan::write_atomic(ev, &sidecar)?;
        grid
    } else {
        let opts = ScanOptions {
            workers: s.workers,
            stop_after_tiles: a.stop_after_tiles,
        };
        match scan::run(&meta, &opts, s.checkpoint.as_deref())? {
            ScanStatus::Complete(g) => g,
            ScanStatus::Interrupted {
                completed_tiles,
                total_tiles,
            } => {
                #[derive(Serialize)]
                struct Interrupted {
                    completed_tiles: usize,
                    total_tiles: usize,
                }
                return s.emit(
                    "scan",
                    Interrupted {
                        completed_tiles,
                        total_tiles,
                    },
                );
            }
        }
    };
    if let Some(p) = &a.ppm {
        scan::write_ppm(
            p,
            &grid.labels,
            a.width as usize,
            a.height as usize,
            &Palette::default(),
        )?;
    }
    s.emit("scan", summarize(grid))
}

fn cmd_area(s: &Settings, a: &AreaArgs) -> Result<()> {
    let rect = rect_of(&a.rect)?;
    let budget = s.budget.unwrap_or(1000);
    let disks = attractor_disks(&s.family, s.param, &ClassifyOptions::default());
    let est = estimate_area_with(&s.family, s.param, &rect, a.samples, budget, s.seed, &disks)?;
    if let (Some(w), Some(p)) = (a.raster, &a.ppm) {
        let labels: Vec<u8> = label_raster(&s.family, s.param, &rect, w, w, budget, &disks)
            .iter()
            .map(|l| l.to_byte())
            .collect();
        scan::write_ppm(p, &labels, w, w, &Palette::default())?;
    }
    #[derive(Serialize)]
    struct Area {
        no_attractor_known: bool,
        estimate: MeasureEstimate,
    }
    s.emit(
        "area",
        Area {
            no_attractor_known: disks.is_empty(),
            estimate: est,
        },
    )
}

fn cmd_wv(s: &Settings, a: &WvArgs) -> Result<()> {
    let t = s.family.tract_over_infinity(s.param);
    let report = wv::wv_report(
        &s.family, s.param, &t, a.radius, a.tau, a.alpha, a.beta, a.probes,
    )?;
    let dca = wv::dca_check(&s.family, s.param, &t, &[10.0, 30.0, 100.0]).ok();
    let seq = match a.escape_return {
        Some(n) => {
            let ts = s
                .family
                .tract_over_value(s.param)
                .ok_or(wv::WvError::NoReturnTract)?;
            Some(wv::escape_return(
                &s.family,
                s.param,
                &t,
                &ts,
                n,
                a.start_radius,
            )?)
        }
        None => None,
    };
    #[derive(Serialize)]
    struct Wv {
        report: wv::WVReport,
        dca_c_lower: Option<f64>,
        escape_return: Option<wv::EscapeReturnSequence>,
    }
    s.emit(
        "wv-check",
        Wv {
            report,
            dca_c_lower: dca,
            escape_return: seq,
        },
    )
}

fn cmd_phase(s: &Settings, a: &PhaseArgs) -> Result<()> {
    let (f, base) = (&s.family, s.param);
    let point = match &a.base_point {
        Some(p) => parse_complex(p)?,
        None => pp::v_j(f, a.j, base, a.k)?,
    };
    let cp = ContinuedPoint {
        base_param: base,
        base_point: point,
        period: a.period,
    };
    let v = match &a.op {
        PhaseOp::Xi { n, offset } => {
            serde_json::to_value(pp::xi(f, a.j, *n, base + parse_complex(offset)?, a.k)?)?
        }
        PhaseOp::Continue { offset, steps } => serde_json::to_value(pp::continue_point(
            f,
            &cp,
            base + parse_complex(offset)?,
            *steps,
        )?)?,
        PhaseOp::Transversality { ladder } => {
            serde_json::to_value(pp::transversality(f, a.j, &cp, a.k, ladder)?)?
        }
        PhaseOp::Compare { offset, n } => {
            let at = base + parse_complex(offset)?;
            let n = match n {
                Some(n) => *n,
                None => {
                    pp::first_separation_index(
                        f,
                        a.j,
                        at,
                        &cp,
                        a.k,
                        pp::DELTA_DOUBLE_PRIME,
                        pp::DELTA_PRIME,
                        200,
                    )?
                    .ok_or_else(|| anyhow!("no step with separation in [1e-4, 1e-2]"))?
                    .0
                }
            };
            serde_json::to_value(pp::derivative_comparison(f, a.j, at, &cp, a.k, n)?)?
        }
        PhaseOp::Grow {
            offset,
            whitney_k,
            scale,
            neighborhood,
            max_n,
        } => {
            let disk = WhitneyDisk::new(base, base + parse_complex(offset)?, *whitney_k);
            serde_json::to_value(pp::grow_to_scale(
                f,
                a.j,
                &disk,
                &cp,
                a.k,
                *scale,
                *neighborhood,
                *max_n,
            )?)?
        }
        PhaseOp::Blowup {
            seed_center,
            seed_radius,
            target_center,
            r_in,
            r_out,
            radial,
            angular,
            max_n,
            samples,
        } => {
            let target = AnnulusTarget {
                center: parse_complex(target_center)?,
                r_in: *r_in,
                r_out: *r_out,
                radial_cells: *radial,
                angular_cells: *angular,
            };
            let r = pp::blowup_check(
                f,
                base,
                parse_complex(seed_center)?,
                *seed_radius,
                &target,
                *max_n,
                *samples,
            )?;
            serde_json::to_value(r)?
        }
    };
    s.emit("phase", v)
}

fn cmd_render(s: &Settings, a: &RenderArgs) -> Result<()> {
    let text = fs::read_to_string(&a.input)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let grid_value = value
        .pointer("/result/grid")
        .or_else(|| value.get("grid"))
        .unwrap_or(&value)
        .clone();
    let grid: ScanGrid = serde_json::from_value(grid_value).context("input is not a scan grid")?;
    let out = s
        .out
        .as_ref()
        .ok_or_else(|| anyhow!("render needs --out"))?;
    scan::write_ppm(
        out,
        &grid.labels,
        grid.meta.width as usize,
        grid.meta.height as usize,
        &Palette::default(),
    )?;
    Ok(())
}

fn main() -> Result<()> {
    dispatch(&Cli::parse())
}

fn dispatch(cli: &Cli) -> Result<()> {
    let s = settings(&cli.global)?;
    match &cli.command {
        Command::Classify => s.emit(
            "classify",
            classify(&s.family, s.param, &s.classify_options()),
        ),
        Command::Scan(a) => cmd_scan(&s, a),
        Command::Density(a) => {
            let curve = scan::density_curve(
                &s.family,
                s.param,
                &a.radii,
                a.cells,
                &s.classify_options(),
                s.workers,
            )?;
            s.emit("density", curve)
        }
        Command::Area(a) => cmd_area(&s, a),
        Command::WvCheck(a) => cmd_wv(&s, a),
        Command::Phase(a) => cmd_phase(&s, a),
        Command::Examples => s.emit("examples", landmarks::reproduce(&s.classify_options())?),
        Command::Render(a) => cmd_render(&s, a),
    }
}
