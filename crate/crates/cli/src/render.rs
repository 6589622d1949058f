use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use graphtone::blending::{self, alpha_stack, blend_image, AlphaStack, BlendConfig, FrameStack};
use graphtone::checkpoint::Checkpoint;
use graphtone::dataset::{self, LabelTable};
use graphtone::fc::per_segment_tonecurve;
use graphtone::model::{contexts, predict, ModelParams};
use graphtone::{build_graph, AblationMode, DisplayImage, LinearImage, SegmentationMap, SemanticGraph};

use crate::plot::{self, Series, PALETTE};
use crate::util::{class_name, create_out, invalid, require_file, write};
use crate::GlobalArgs;

#[derive(Debug, Args)]
pub struct SceneArgs {
    /// 16-bit linear RGB input.
    #[arg(long)]
    pub image: PathBuf,

    /// Coarse segmentation map of the input (same size).
    #[arg(long)]
    pub seg: PathBuf,

    /// Treat `--seg` as fine labels merged with this table (`default` for
    /// the built-in one).
    #[arg(long)]
    pub label_table: Option<String>,
}

impl SceneArgs {
    fn validate(&self) -> Result<()> {
        require_file(&self.image, "image")?;
        require_file(&self.seg, "segmentation map")
    }

    fn load(&self) -> Result<(LinearImage, SegmentationMap)> {
        self.validate()?;
        let img = dataset::load_linear(&self.image)?;
        let seg = match self.label_table.as_deref() {
            None => dataset::load_segmentation(&self.seg)?,
            Some(t) => {
                let table = if t == "default" { LabelTable::ade20k() } else { LabelTable::load(t)? };
                dataset::merge_labels(&dataset::load_fine_labels(&self.seg)?, &table)?.0
            }
        };
        if img.dims() != seg.dims() {
            return Err(invalid(format!(
                "image is {}x{} but segmentation is {}x{}",
                img.width(),
                img.height(),
                seg.width(),
                seg.height()
            )));
        }
        Ok((img, seg))
    }

    fn stem(&self) -> String {
        self.image
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("output")
            .to_string()
    }
}

#[derive(Debug, Args)]
pub struct BlendParams {
    /// Feathering radius in pixels.
    #[arg(long, default_value_t = BlendConfig::default().radius)]
    pub radius: f64,

    /// Bilateral filter window diameter in pixels.
    #[arg(long, default_value_t = BlendConfig::default().diameter)]
    pub diameter: f64,

    /// Bilateral range sigma on the 0..255 alpha scale.
    #[arg(long, default_value_t = BlendConfig::default().sigma_color)]
    pub sigma_color: f64,

    /// Bilateral spatial sigma in pixels.
    #[arg(long, default_value_t = BlendConfig::default().sigma_space)]
    pub sigma_space: f64,
}

impl BlendParams {
    fn config(&self) -> Result<BlendConfig> {
        let c = BlendConfig {
            radius: self.radius,
            diameter: self.diameter,
            sigma_color: self.sigma_color,
            sigma_space: self.sigma_space,
        };
        if !(c.radius >= 1.0 && c.diameter >= 1.0 && c.sigma_color > 0.0 && c.sigma_space > 0.0) {
            return Err(invalid("blend radius and diameter must be at least 1 and sigmas positive"));
        }
        Ok(c)
    }
}

fn load_model(path: &Path) -> Result<ModelParams> {
    require_file(path, "checkpoint")?;
    let ckpt = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(ckpt.best_params().clone())
}

#[derive(Debug, Args)]
pub struct GraphArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
}

pub fn graph(args: &GraphArgs, global: &GlobalArgs) -> Result<()> {
    let (img, seg) = args.scene.load()?;
    let g = build_graph(&img, &seg)?;
    create_out(&global.out)?;
    let path = write(
        &global.out,
        format!("{}_graph.json", args.scene.stem()),
        serde_json::to_string_pretty(&g.dump())?,
    )?;
    println!("{} nodes, {} edges; written to {}", g.node_count(), g.undirected_edges().len(), path.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Trained model checkpoint (the best weights are used).
    #[arg(long)]
    pub checkpoint: PathBuf,

    #[command(flatten)]
    pub scene: SceneArgs,

    /// Render one frame per segment and blend them with feathered masks.
    #[arg(long)]
    pub blend: bool,

    /// Also write per-segment alpha maps, frames and tone curves.
    #[arg(long)]
    pub dump_debug: bool,

    /// Write 8-bit instead of 16-bit PNG.
    #[arg(long)]
    pub eight_bit: bool,

    #[command(flatten)]
    pub blend_params: BlendParams,
}

pub fn infer(args: &InferArgs, global: &GlobalArgs) -> Result<()> {
    let blend_config = args.blend_params.config()?;
    args.scene.validate()?;
    let params = load_model(&args.checkpoint)?;
    let (img, seg) = args.scene.load()?;
    let graph = build_graph(&img, &seg)?;

    let needs_stack = args.blend || args.dump_debug;
    let staged = if needs_stack {
        Some(blend_image(&params, &img, &seg, &graph, &blend_config)?)
    } else {
        None
    };
    let output = match (&staged, args.blend) {
        (Some(b), true) => b.image.clone(),
        _ => predict(&params, &img, params.mode().uses_graph().then_some(&graph))?,
    };

    create_out(&global.out)?;
    let path = global.out.join(format!("{}.png", args.scene.stem()));
    dataset::save_display(&output, &path, !args.eight_bit)?;
    if let Some(b) = &staged {
        if args.dump_debug {
            dump_debug(&global.out.join("debug"), &graph, &b.stack, &b.frames, &params)?;
        }
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn dump_debug(dir: &Path, graph: &SemanticGraph, stack: &AlphaStack, frames: &FrameStack, params: &ModelParams) -> Result<()> {
    for (k, node) in graph.nodes().iter().enumerate() {
        let tag = format!("{k}_{}", class_name(node.label));
        let a = &stack.maps[k];
        dataset::save_gray(&a.values, a.width, a.height, dir.join(format!("alpha_{tag}.png")))?;
        dataset::save_display(&DisplayImage(frames.frames[k].clone()), dir.join(format!("frame_{tag}.png")), false)?;
    }
    for (curve, name) in tone_curves(params, graph, 256)? {
        write(dir, format!("tonecurve_{name}.csv"), curve.to_csv())?;
    }
    Ok(())
}

/// One curve per node, or a single `global` curve for `global_lut`.
fn tone_curves(params: &ModelParams, graph: &SemanticGraph, samples: usize) -> Result<Vec<(graphtone::fc::ToneCurve, String)>> {
    let ctx = contexts(params, Some(graph))?;
    let slope = params.config.fc_negative_slope;
    if params.mode() == AblationMode::GlobalLut {
        return Ok(vec![(per_segment_tonecurve(&params.fc, ctx.row(0), samples, 0, slope)?, "global".into())]);
    }
    graph
        .nodes()
        .iter()
        .enumerate()
        .map(|(k, n)| {
            Ok((
                per_segment_tonecurve(&params.fc, ctx.row(k), samples, k, slope)?,
                format!("{k}_{}", class_name(n.label)),
            ))
        })
        .collect()
}

#[derive(Debug, Args)]
pub struct ToneCurveArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,

    #[command(flatten)]
    pub scene: SceneArgs,

    /// Grey levels sampled per curve.
    #[arg(long, default_value_t = 256)]
    pub samples: usize,
}

pub fn tonecurve(args: &ToneCurveArgs, global: &GlobalArgs) -> Result<()> {
    if args.samples < 2 {
        return Err(invalid("--samples must be at least 2"));
    }
    args.scene.validate()?;
    let params = load_model(&args.checkpoint)?;
    let (img, seg) = args.scene.load()?;
    let graph = build_graph(&img, &seg)?;
    let curves = tone_curves(&params, &graph, args.samples)?;
    create_out(&global.out)?;
    for (curve, name) in &curves {
        write(&global.out, format!("tonecurve_{name}.csv"), curve.to_csv())?;
    }
    // Plotted against log10 of the input grey.
    let logged: Vec<Vec<(f64, f64)>> = curves
        .iter()
        .map(|(c, _)| c.points.iter().map(|&(x, y)| (x.log10(), y)).collect())
        .collect();
    let series: Vec<Series> = logged
        .iter()
        .enumerate()
        .map(|(k, pts)| Series {
            points: pts,
            color: PALETTE[k % PALETTE.len()],
        })
        .collect();
    plot::save(&plot::line_chart(&series, false), &global.out.join("tonecurves.png"))?;
    println!("wrote {} tone curves to {}", curves.len(), global.out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct BlendArgs {
    /// Segmentation map of the scene.
    #[arg(long)]
    pub seg: PathBuf,

    /// One rendered frame per segment label, in ascending label order.
    #[arg(long, num_args = 1.., required = true)]
    pub frames: Vec<PathBuf>,

    /// Output file name inside --out.
    #[arg(long, default_value = "blended.png")]
    pub name: String,

    #[command(flatten)]
    pub blend_params: BlendParams,
}

pub fn blend(args: &BlendArgs, global: &GlobalArgs) -> Result<()> {
    let config = args.blend_params.config()?;
    require_file(&args.seg, "segmentation map")?;
    for f in &args.frames {
        require_file(f, "frame")?;
    }
    if Path::new(&args.name).components().count() != 1 {
        return Err(invalid("--name must be a plain file name"));
    }
    let seg = dataset::load_segmentation(&args.seg)?;
    let labels = seg.distinct_labels();
    if labels.len() != args.frames.len() {
        return Err(invalid(format!(
            "segmentation has {} labels {:?} but {} frames were given",
            labels.len(),
            labels,
            args.frames.len()
        )));
    }
    let frames = args
        .frames
        .iter()
        .map(|p| Ok(dataset::load_reference(p)?.into_inner()))
        .collect::<Result<Vec<_>>>()?;
    if let Some(bad) = frames.iter().position(|f| f.dims() != seg.dims()) {
        return Err(invalid(format!("frame {} does not match the segmentation size", args.frames[bad].display())));
    }
    let stack = alpha_stack(&seg, &config)?;
    let out = blending::blend(&stack, &FrameStack { frames })?;
    let out = DisplayImage(out.map(|p| p.map(|v| v.clamp(0.0, 1.0))));
    create_out(&global.out)?;
    let path = global.out.join(&args.name);
    dataset::save_display(&out, &path, true)?;
    println!("wrote {}", path.display());
    Ok(())
}
