use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use idblend::apps::{self, MorphNoise};
use idblend::bundle::{load_bundle, save_bundle};
use idblend::eval::{
    self, capacity_experiment, cropping_experiment, evaluate, memory_curve, panorama_experiment, textures,
    ConvExtractor, FeatureExtractor, NiqeModel, PanoramaConfig, StubExtractor,
};
use idblend::identity::{blend_constant, constant_id, decode_indexed_png, decode_label_png, decode_raster};
use idblend::train::{continue_training, init_model, IterationReport, ScaleReport};
use idblend::{BinaryMask, Error, IdentityMap, ImageBuffer, Model, Result, TrainConfig, TrainObserver};

use crate::server::{self, Registry};

#[derive(Parser, Debug)]
#[command(name = "idblend", version, about = "Train and query identity-conditioned multi-scale image GANs")]
pub struct Cli {
    /// Flat `key = value` file with training settings.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Training seed for `train`, request seed for generation commands.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Where outputs (or, for `train`, the bundle) are written.
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// Only `cpu` is supported.
    #[arg(long, global = true, default_value = "cpu")]
    pub device: String,
    /// Overrides one training setting; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct BundleArg {
    /// Bundle directory written by `train`.
    #[arg(long)]
    pub bundle: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum NoiseArg {
    Reconstruction,
    Random,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a bundle on one or more images (identity k = k-th image).
    Train {
        /// Training images; the first one sets the scale plan.
        #[arg(long, num_args = 1.., required = true)]
        images: Vec<PathBuf>,
        /// Iterations per scale.
        #[arg(long)]
        iterations: Option<usize>,
        /// Name stored in the manifest (defaults to the output directory name).
        #[arg(long)]
        project_id: Option<String>,
        /// Continue the bundle already in --out-dir.
        #[arg(long)]
        resume: bool,
        /// No progress lines.
        #[arg(long)]
        quiet: bool,
    },
    /// Random samples under a constant id, a blend or a mask.
    Sample {
        #[command(flatten)]
        b: BundleArg,
        #[arg(long, conflicts_with_all = ["weights", "mask"])]
        id: Option<usize>,
        /// Comma-separated blend weights, one per identity.
        #[arg(long, conflicts_with = "mask")]
        weights: Option<String>,
        /// Indexed PNG or `.bgid` raster identity map.
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Output size as HxW; defaults to the training size.
        #[arg(long)]
        size: Option<String>,
        #[arg(long, default_value_t = 1)]
        n: usize,
    },
    /// Regenerate training images from the fixed reconstruction noise.
    Reconstruct {
        #[command(flatten)]
        b: BundleArg,
        /// Defaults to every identity.
        #[arg(long)]
        id: Option<usize>,
    },
    /// Left-to-right transition between identities.
    Meld {
        #[command(flatten)]
        b: BundleArg,
        #[arg(long, default_value = "0,1")]
        ids: String,
        #[arg(long)]
        out_width: Option<usize>,
        #[arg(long, default_value_t = 1.0 / 3.0)]
        frac: f64,
    },
    /// One frame per weight: scalar t blends (1 - t) of --from with t of --to.
    Morph {
        #[command(flatten)]
        b: BundleArg,
        #[arg(long, default_value = "0.2,0.4,0.6,0.8")]
        weights: String,
        #[arg(long, default_value_t = 0)]
        from: usize,
        #[arg(long, default_value_t = 1)]
        to: usize,
        #[arg(long, value_enum, default_value = "reconstruction")]
        noise: NoiseArg,
    },
    /// Structure of one identity at coarse scales, texture of another below.
    Fuse {
        #[command(flatten)]
        b: BundleArg,
        #[arg(long)]
        structure: usize,
        #[arg(long)]
        texture: usize,
        /// Scales at and above this index (0 = finest) use the structure id.
        #[arg(long)]
        transition: usize,
        #[arg(long)]
        size: Option<String>,
    },
    /// Generation under a per-pixel categorical mask.
    Spatial {
        #[command(flatten)]
        b: BundleArg,
        #[arg(long)]
        mask: PathBuf,
        /// PNG whose non-zero pixels keep the reconstruction noise.
        #[arg(long)]
        faithful: Option<PathBuf>,
    },
    /// Inject an edited image at a coarse scale and re-render the finer ones.
    Edit {
        #[command(flatten)]
        b: BundleArg,
        #[arg(long)]
        image: PathBuf,
        /// Defaults to the second-coarsest scale.
        #[arg(long)]
        inject_scale: Option<usize>,
        #[arg(long, default_value_t = 0)]
        id: usize,
        #[arg(long, conflicts_with = "id")]
        mask: Option<PathBuf>,
    },
    /// Diversity, SIFID and NIQE over random samples; writes CSV and JSON.
    Eval {
        #[command(flatten)]
        b: BundleArg,
        /// Comma-separated identities; defaults to all.
        #[arg(long)]
        id: Option<String>,
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[arg(long)]
        niqe_model: Option<PathBuf>,
        /// JSON convolutional feature extractor; a fixed random projection otherwise.
        #[arg(long)]
        extractor: Option<PathBuf>,
    },
    /// Peak memory of one training step against image size, as CSV.
    BenchMemory {
        #[arg(long, default_value = "128,256,512")]
        sides: String,
        /// Crop window, or `none`.
        #[arg(long, default_value = "128")]
        crop: String,
    },
    /// Training-set analyses.
    Experiment {
        #[command(subcommand)]
        which: Experiment,
    },
    /// HTTP inference service over a bundle or a directory of bundles.
    Serve {
        #[arg(long)]
        bundles: PathBuf,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Bundles kept in memory.
        #[arg(long, default_value_t = 4)]
        cache: usize,
    },
}

#[derive(Subcommand, Debug)]
pub enum Experiment {
    /// Quality against similarity of the two training crops.
    Panorama {
        /// Wide image; a synthetic panorama when omitted.
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long, default_value_t = 6)]
        crops: usize,
        #[arg(long, default_value_t = 0.5)]
        overlap: f64,
        #[arg(long, default_value_t = 50)]
        samples: usize,
        /// Also train crop 0 against itself.
        #[arg(long)]
        baseline: bool,
        /// Models trained per pair, with consecutive seeds.
        #[arg(long, default_value_t = 1)]
        repeats: usize,
    },
    /// Quality against the number of training images and network width.
    Capacity {
        /// Synthetic textures when omitted.
        #[arg(long, num_args = 1..)]
        images: Vec<PathBuf>,
        #[arg(long, default_value = "1,2,3,4")]
        ks: String,
        #[arg(long, default_value = "32,64")]
        channels: String,
        #[arg(long, default_value_t = 50)]
        samples: usize,
    },
    /// Uncropped against cropped training on the same images.
    Cropping {
        #[arg(long, num_args = 1..)]
        images: Vec<PathBuf>,
        #[arg(long, default_value_t = 128)]
        crop: usize,
        #[arg(long, default_value_t = 50)]
        samples: usize,
        #[arg(long)]
        niqe_model: Option<PathBuf>,
    },
}

pub fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad {what} entry {p:?}")))
        })
        .collect()
}

pub fn parse_size(s: &str) -> Result<(usize, usize)> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| Error::InvalidInput(format!("size {s:?} is not HxW")))?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|_| Error::InvalidInput(format!("size {s:?} is not HxW")));
    Ok((p(h)?, p(w)?))
}

/// Defaults, then the config file, then `--set`, then `--seed`.
pub fn train_config(cli: &Cli) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(p) = &cli.config {
        let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        cfg.apply_text(&text)?;
    }
    for o in &cli.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {o:?}")))?;
        cfg.set(k, v)?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_map(path: &Path, num_ids: usize) -> Result<IdentityMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let m = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("bgid")) {
        decode_raster(&bytes)?
    } else {
        decode_indexed_png(&bytes, num_ids)?
    };
    if m.num_ids() != num_ids {
        return Err(Error::InvalidInput(format!(
            "{} has K = {}, the bundle has K = {num_ids}",
            path.display(),
            m.num_ids()
        )));
    }
    Ok(m)
}

fn load_binary_mask(path: &Path) -> Result<BinaryMask> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (labels, (h, w)) = decode_label_png(&bytes)?;
    BinaryMask::new(h, w, labels.into_iter().map(|l| l != 0).collect())
}

struct Out {
    dir: PathBuf,
}

impl Out {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Out { dir: dir.to_path_buf() })
    }

    fn png(&self, name: &str, img: &ImageBuffer) -> Result<()> {
        let p = self.dir.join(name);
        img.save_png(&p)?;
        println!("{}", p.display());
        Ok(())
    }

    fn text(&self, name: &str, body: &str) -> Result<()> {
        let p = self.dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        println!("{}", p.display());
        Ok(())
    }

    fn json<T: serde::Serialize>(&self, name: &str, v: &T) -> Result<()> {
        self.text(name, &serde_json::to_string_pretty(v)?)
    }
}

/// Prints progress and rewrites the bundle after every finished scale.
struct Checkpointer<'a> {
    dir: &'a Path,
    project: String,
    cfg: &'a TrainConfig,
    quiet: bool,
    start: Instant,
}

impl TrainObserver for Checkpointer<'_> {
    fn iteration(&mut self, r: &IterationReport) {
        if !self.quiet && (r.iteration + 1) % 100 == 0 {
            eprintln!(
                "scale {} iter {:>5}  d {:+.4}  adv {:+.4}  rec {:.5}",
                r.scale,
                r.iteration + 1,
                r.d_loss,
                r.g_adv,
                r.g_rec
            );
        }
    }

    fn scale_done(&mut self, model: &Model, r: &ScaleReport) -> Result<()> {
        save_bundle(self.dir, &self.project, model, self.cfg)?;
        if !self.quiet {
            eprintln!(
                "scale {} done (sigma {:.4}) after {:.1}s",
                r.scale,
                r.sigma,
                self.start.elapsed().as_secs_f64()
            );
        }
        Ok(())
    }
}

fn extractor(path: &Option<PathBuf>) -> Result<Box<dyn FeatureExtractor>> {
    Ok(match path {
        Some(p) => Box::new(ConvExtractor::load(p)?),
        None => Box::new(StubExtractor::default()),
    })
}

fn load_images(paths: &[PathBuf]) -> Result<Vec<ImageBuffer>> {
    paths.iter().map(ImageBuffer::load).collect()
}

fn progress(msg: &str) {
    eprintln!("{msg}");
}

pub fn run(cli: Cli) -> Result<()> {
    if cli.device != "cpu" {
        return Err(Error::Config(format!("device {:?} is not available; only cpu is supported", cli.device)));
    }
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::Train {
            images,
            iterations,
            project_id,
            resume,
            quiet,
        } => {
            let dir = &cli.out_dir;
            let (model, cfg) = if *resume {
                let b = load_bundle(dir)?;
                let mut cfg = b.manifest.config.clone();
                if let Some(n) = iterations {
                    cfg.iterations = *n;
                }
                (b.model, cfg)
            } else {
                let mut cfg = train_config(&cli)?;
                if let Some(n) = iterations {
                    cfg.iterations = *n;
                }
                let imgs = load_images(images)?;
                (init_model(&imgs, &cfg)?, cfg)
            };
            let project = project_id.clone().unwrap_or_else(|| {
                dir.file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "project".into())
            });
            if !quiet {
                eprintln!("scales {:?}, K = {}", model.plan.sizes, model.num_ids);
            }
            save_bundle(dir, &project, &model, &cfg)?;
            let mut obs = Checkpointer {
                dir,
                project: project.clone(),
                cfg: &cfg,
                quiet: *quiet,
                start: Instant::now(),
            };
            let model = continue_training(model, &cfg, None, &mut obs)?;
            save_bundle(dir, &project, &model, &cfg)?;
            println!("{}", dir.join(idblend::bundle::MANIFEST).display());
        }
        Command::Sample { b, id, weights, mask, size, n } => {
            let model = load_bundle(&b.bundle)?.model;
            let size = match size {
                Some(s) => parse_size(s)?,
                None => model.plan.full_size(),
            };
            let map = match (id, weights, mask) {
                (_, Some(w), _) => blend_constant(&parse_list::<f64>(w, "weight")?, (1, 1))?,
                (_, _, Some(p)) => load_map(p, model.num_ids)?,
                (k, _, _) => constant_id(k.unwrap_or(0), model.num_ids, (1, 1))?,
            };
            let out = Out::new(&cli.out_dir)?;
            for i in 0..*n {
                let img = apps::sample(&model, &map, size, seed + i as u64)?;
                out.png(&format!("sample_{i:03}.png"), &img)?;
            }
        }
        Command::Reconstruct { b, id } => {
            let model = load_bundle(&b.bundle)?.model;
            let out = Out::new(&cli.out_dir)?;
            let ids: Vec<usize> = match id {
                Some(k) => vec![*k],
                None => (0..model.num_ids).collect(),
            };
            for k in ids {
                out.png(&format!("reconstruct_id{k}.png"), &apps::reconstruct(&model, k)?)?;
            }
        }
        Command::Meld { b, ids, out_width, frac } => {
            let model = load_bundle(&b.bundle)?.model;
            let ids = parse_list::<usize>(ids, "identity")?;
            let w = out_width.unwrap_or(model.plan.full_size().1 * ids.len());
            let img = apps::meld(&model, &ids, w, *frac, seed)?;
            Out::new(&cli.out_dir)?.png("meld.png", &img)?;
        }
        Command::Morph {
            b,
            weights,
            from,
            to,
            noise,
        } => {
            let model = load_bundle(&b.bundle)?.model;
            let entries: Vec<crate::wire::WeightEntry> = parse_list::<f64>(weights, "weight")?
                .into_iter()
                .map(crate::wire::WeightEntry::Scalar)
                .collect();
            let w = crate::wire::morph_weights(&entries, *from, *to, model.num_ids)
                .map_err(|e| Error::InvalidInput(e.error))?;
            let mode = match noise {
                NoiseArg::Reconstruction => MorphNoise::Reconstruction,
                NoiseArg::Random => MorphNoise::Random,
            };
            let out = Out::new(&cli.out_dir)?;
            for (i, f) in apps::morph(&model, &w, mode, seed)?.iter().enumerate() {
                out.png(&format!("morph_{i:03}.png"), f)?;
            }
        }
        Command::Fuse {
            b,
            structure,
            texture,
            transition,
            size,
        } => {
            let model = load_bundle(&b.bundle)?.model;
            let size = match size {
                Some(s) => parse_size(s)?,
                None => model.plan.full_size(),
            };
            let img = apps::fuse(&model, *structure, *texture, *transition, size, seed)?;
            Out::new(&cli.out_dir)?.png("fuse.png", &img)?;
        }
        Command::Spatial { b, mask, faithful } => {
            let model = load_bundle(&b.bundle)?.model;
            let map = load_map(mask, model.num_ids)?;
            let f = faithful.as_deref().map(load_binary_mask).transpose()?;
            let img = apps::spatial_sample(&model, &map, f.as_ref(), seed)?;
            Out::new(&cli.out_dir)?.png("spatial.png", &img)?;
        }
        Command::Edit {
            b,
            image,
            inject_scale,
            id,
            mask,
        } => {
            let model = load_bundle(&b.bundle)?.model;
            let edited = ImageBuffer::load(image)?;
            let map = match mask {
                Some(p) => load_map(p, model.num_ids)?,
                None => constant_id(*id, model.num_ids, (1, 1))?,
            };
            let m = inject_scale.unwrap_or_else(|| apps::default_inject_level(&model));
            let img = apps::edit(&model, &edited, m, &map, seed)?;
            Out::new(&cli.out_dir)?.png("edit.png", &img)?;
        }
        Command::Eval {
            b,
            id,
            n,
            niqe_model,
            extractor: ex_path,
        } => {
            let model = load_bundle(&b.bundle)?.model;
            let ids = match id {
                Some(s) => parse_list::<usize>(s, "identity")?,
                None => (0..model.num_ids).collect(),
            };
            let nq = niqe_model.as_deref().map(NiqeModel::load).transpose()?;
            let ex = extractor(ex_path)?;
            let e = evaluate(&model, &ids, *n, seed, ex.as_ref(), nq.as_ref())?;
            for note in &e.notes {
                eprintln!("{note}");
            }
            let out = Out::new(&cli.out_dir)?;
            out.text("report.csv", &e.report.to_csv())?;
            out.json("report.json", &e)?;
        }
        Command::BenchMemory { sides, crop } => {
            let cfg = train_config(&cli)?;
            let sides = parse_list::<usize>(sides, "side")?;
            let crop = match crop.as_str() {
                "none" | "off" => None,
                c => Some(c.parse().map_err(|_| Error::InvalidInput(format!("bad crop {c:?}")))?),
            };
            let pts = memory_curve(&sides, crop, &cfg)?;
            Out::new(&cli.out_dir)?.text("memory.csv", &eval::experiments::memory_csv(&pts))?;
        }
        Command::Experiment { which } => {
            let cfg = train_config(&cli)?;
            let ex = StubExtractor::default();
            let out = Out::new(&cli.out_dir)?;
            match which {
                Experiment::Panorama {
                    image,
                    crops,
                    overlap,
                    samples,
                    baseline,
                    repeats,
                } => {
                    let pano = match image {
                        Some(p) => ImageBuffer::load(p)?,
                        None => textures::toy_panorama((48, 240), cfg.seed),
                    };
                    let pc = PanoramaConfig {
                        num_crops: *crops,
                        overlap: *overlap,
                        samples: *samples,
                        include_baseline: *baseline,
                        repeats: *repeats,
                        train: cfg.clone(),
                        seed,
                    };
                    let r = panorama_experiment(&pano, &pc, &ex, &mut progress)?;
                    out.text("panorama.csv", &r.to_csv())?;
                    out.json("panorama.json", &r)?;
                }
                Experiment::Capacity {
                    images,
                    ks,
                    channels,
                    samples,
                } => {
                    let ks = parse_list::<usize>(ks, "K")?;
                    let imgs = if images.is_empty() {
                        let kmax = ks.iter().copied().max().unwrap_or(1);
                        (0..kmax).map(|k| textures::texture(k, (48, 48), cfg.seed + k as u64)).collect()
                    } else {
                        load_images(images)?
                    };
                    let ch = parse_list::<usize>(channels, "channel")?;
                    let rows = capacity_experiment(&imgs, &ks, &ch, &cfg, *samples, seed, &ex, &mut progress)?;
                    out.text("capacity.csv", &eval::experiments::capacity_csv(&rows))?;
                }
                Experiment::Cropping {
                    images,
                    crop,
                    samples,
                    niqe_model,
                } => {
                    let imgs = if images.is_empty() {
                        vec![textures::texture(0, (64, 64), cfg.seed), textures::texture(1, (64, 64), cfg.seed + 1)]
                    } else {
                        load_images(images)?
                    };
                    let nq = niqe_model.as_deref().map(NiqeModel::load).transpose()?;
                    let rows = cropping_experiment(&imgs, &cfg, *crop, *samples, seed, &ex, nq.as_ref(), &mut progress)?;
                    let mut csv = String::from("variant,");
                    csv += idblend::eval::MetricReport::CSV_HEADER;
                    csv.push('\n');
                    for r in &rows {
                        let line = r.evaluation.report.to_csv();
                        csv += &format!("{},{}\n", r.variant, line.lines().nth(1).unwrap_or(""));
                    }
                    out.text("cropping.csv", &csv)?;
                    out.json("cropping.json", &rows)?;
                }
            }
        }
        Command::Serve {
            bundles,
            host,
            port,
            cache,
        } => {
            let reg = Arc::new(Registry::new(bundles.clone(), *cache));
            if reg.model_ids().is_empty() {
                return Err(Error::MissingFile(bundles.join(idblend::bundle::MANIFEST)));
            }
            let addr: SocketAddr = format!("{host}:{port}")
                .parse()
                .map_err(|_| Error::Config(format!("bad address {host}:{port}")))?;
            let rt = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .map_err(|e| Error::Config(e.to_string()))?;
            rt.block_on(server::serve(reg, addr)).map_err(|e| Error::Config(e.to_string()))?;
        }
    }
    Ok(())
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
