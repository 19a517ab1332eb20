use std::fs;
use std::path::{Path, PathBuf};

use inpaint_core::completion::{blend_reconstruct, optimize_latent_batch, Mask};
use inpaint_core::data::{
    decode_image, encode_pgm, gen_faces, gen_mixture2d, load_checkpoint, make_mask, read_dataset, save_checkpoint,
    split_dataset, write_dataset,
};
use inpaint_core::enhance::{enhance_image, make_pairs, train_enhancer_with};
use inpaint_core::metrics::{to_255, QualityReport};
use inpaint_core::models::{ArchPreset, Model};
use inpaint_core::wgan::train_wgan_with;
use inpaint_core::{Rng, Tensor};

use crate::config::{DataKind, RunConfig};
use crate::error::CliError;

type Result<T> = std::result::Result<T, CliError>;

/// Stream offsets so data synthesis, degradation noise, masks and model
/// initialisation never share draws with training when the seeds coincide.
const INIT_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;
const DATA_STREAM: u64 = 0x6a09_e667_f3bc_c908;
const NOISE_STREAM: u64 = 0xbb67_ae85_84ca_a73b;
const MASK_STREAM: u64 = 0x3c6e_f372_fe94_f82b;

pub struct Ctx {
    pub cfg: RunConfig,
    pub out: PathBuf,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(format!("cannot read {}", path.display()), e))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(format!("cannot write {}", path.display()), e))
}

impl Ctx {
    pub fn new(cfg: RunConfig, out: PathBuf) -> Result<Self> {
        let ctx = Self { cfg, out };
        let dir = ctx.subdir("")?;
        let text = serde_json::to_string_pretty(&ctx.cfg).expect("config serializes");
        write(&dir.join("config.json"), text + "\n")?;
        Ok(ctx)
    }

    fn subdir(&self, name: &str) -> Result<PathBuf> {
        let dir = self.out.join(name);
        fs::create_dir_all(&dir).map_err(|e| CliError::io(format!("cannot create {}", dir.display()), e))?;
        Ok(dir)
    }

    fn ckpt(&self, given: Option<&Path>, name: &str) -> PathBuf {
        given.map(Path::to_path_buf).unwrap_or_else(|| self.out.join("ckpt").join(name))
    }

    fn init(&self, preset: &ArchPreset, seed: u64) -> Result<Model<f64>> {
        Ok(Model::init(preset.clone(), &mut Rng::new(seed ^ INIT_STREAM))?)
    }
}

fn load_model(path: &Path, what: &str) -> Result<Model<f64>> {
    if !path.exists() {
        return Err(CliError::io(
            format!("missing {what} checkpoint {}", path.display()),
            std::io::Error::from(std::io::ErrorKind::NotFound),
        ));
    }
    Ok(load_checkpoint::<f64>(path)?.0)
}

fn synth_faces(cfg: &RunConfig) -> Result<(Tensor, Tensor)> {
    let d = &cfg.data;
    let mut rng = Rng::new(d.seed ^ DATA_STREAM);
    let all = gen_faces(d.n, d.side, &d.faces, &mut rng)?;
    Ok(split_dataset(&all, d.train_fraction, &mut rng)?)
}

fn synth_mixture(cfg: &RunConfig) -> Result<Tensor> {
    Ok(gen_mixture2d(cfg.data.n, &cfg.data.mixture, &mut Rng::new(cfg.data.seed ^ DATA_STREAM))?)
}

fn mixture_csv(points: &Tensor) -> String {
    let mut s = String::from("x,y\n");
    for p in points.data().chunks_exact(2) {
        s.push_str(&format!("{},{}\n", p[0], p[1]));
    }
    s
}

fn read_mixture_csv(path: &Path) -> Result<Tensor> {
    let text = String::from_utf8(read(path)?).map_err(|_| CliError::Other(format!("{} is not text", path.display())))?;
    let mut data = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || CliError::Other(format!("{}:{}: expected `x,y`", path.display(), i + 1));
        let (x, y) = line.split_once(',').ok_or_else(bad)?;
        data.push(x.trim().parse::<f64>().map_err(|_| bad())?);
        data.push(y.trim().parse::<f64>().map_err(|_| bad())?);
    }
    if data.is_empty() {
        return Err(CliError::Other(format!("empty dataset {}", path.display())));
    }
    Ok(Tensor::from_vec(&[data.len() / 2, 2], data)?)
}

fn stack_split(images: Vec<Tensor>, dir: &Path, split: &str) -> Result<Tensor> {
    if images.is_empty() {
        return Err(CliError::Other(format!("empty dataset: no {split} images in {}", dir.display())));
    }
    Ok(Tensor::stack(&images)?)
}

fn read_faces(dir: &Path) -> Result<Tensor> {
    let (train, _) = read_dataset::<f64>(dir)?;
    stack_split(train, dir, "train")
}

pub fn gen_data(ctx: &Ctx) -> Result<()> {
    let dir = ctx.subdir("data")?;
    match ctx.cfg.data.kind {
        DataKind::Faces => {
            let (train, test) = synth_faces(&ctx.cfg)?;
            write_dataset(&dir, &train, &test)?;
            eprintln!("wrote {} train and {} test faces to {}", train.shape()[0], test.shape()[0], dir.display());
        }
        DataKind::Mixture2d => {
            let points = synth_mixture(&ctx.cfg)?;
            write(&dir.join("mixture.csv"), mixture_csv(&points))?;
            eprintln!("wrote {} points to {}", points.shape()[0], dir.display());
        }
    }
    Ok(())
}

pub fn train_gan(ctx: &Ctx, data: Option<&Path>) -> Result<()> {
    let cfg = &ctx.cfg;
    let (kind, dataset) = match data {
        Some(p) if p.is_dir() => (DataKind::Faces, read_faces(p)?),
        Some(p) => (DataKind::Mixture2d, read_mixture_csv(p)?),
        None => match cfg.data.kind {
            DataKind::Faces => (DataKind::Faces, synth_faces(cfg)?.0),
            DataKind::Mixture2d => (DataKind::Mixture2d, synth_mixture(cfg)?),
        },
    };
    let (gp, cp) = match kind {
        DataKind::Faces => (&cfg.models.image_generator, &cfg.models.image_critic),
        DataKind::Mixture2d => (&cfg.models.toy_generator, &cfg.models.toy_critic),
    };
    let mut gen = ctx.init(gp, cfg.wgan.seed)?;
    let mut critic = ctx.init(cp, cfg.wgan.seed.wrapping_add(1))?;
    let every = (cfg.wgan.epochs / 10).max(1);
    let log = train_wgan_with(&mut gen, &mut critic, &dataset, &cfg.wgan, |r| {
        if r.step % every == 0 {
            eprintln!("cycle {:>6}  wasserstein {:.4}  gp {:.4}", r.step, r.wasserstein, r.gp);
        }
    })?;
    let ckpt = ctx.subdir("ckpt")?;
    save_checkpoint(ckpt.join("generator.wgck"), &gen, cfg.wgan.seed)?;
    save_checkpoint(ckpt.join("critic.wgck"), &critic, cfg.wgan.seed)?;
    write(&ctx.subdir("logs")?.join("wgan.csv"), log.to_csv())?;
    Ok(())
}

pub fn train_enhance(ctx: &Ctx, data: Option<&Path>) -> Result<()> {
    let cfg = &ctx.cfg;
    let clean = match data {
        Some(p) => read_faces(p)?,
        None => synth_faces(cfg)?.0,
    };
    let mut rng = Rng::new(cfg.enhance.seed ^ NOISE_STREAM);
    let pairs = make_pairs(&clean, &cfg.enhance.degradation, &mut rng)?;
    let mut model = ctx.init(&cfg.models.enhancer, cfg.enhance.seed)?;
    let every = (cfg.enhance.epochs / 10).max(1);
    let log = train_enhancer_with(&mut model, &pairs, &cfg.enhance, |epoch, loss| {
        if epoch % every == 0 {
            eprintln!("epoch {epoch:>5}  loss {loss:.6}");
        }
    })?;
    save_checkpoint(ctx.subdir("ckpt")?.join("enhancer.wgck"), &model, cfg.enhance.seed)?;
    write(&ctx.subdir("logs")?.join("enhance.csv"), log.to_csv())?;
    Ok(())
}

/// Input images, sorted by file name when `path` is a directory.
fn list_images(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let files: Vec<PathBuf> = if path.is_dir() {
        let entries = fs::read_dir(path).map_err(|e| CliError::io(format!("cannot list {}", path.display()), e))?;
        let mut v: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| matches!(p.extension().and_then(|x| x.to_str()), Some("pgm" | "ppm")))
            .collect();
        v.sort();
        v
    } else {
        vec![path.to_path_buf()]
    };
    if files.is_empty() {
        return Err(CliError::Other(format!("empty dataset: no images in {}", path.display())));
    }
    files
        .iter()
        .map(|f| {
            let stem = f.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string();
            Ok((stem, decode_image::<f64>(&read(f)?)?))
        })
        .collect()
}

fn masks_for(ctx: &Ctx, images: &[(String, Tensor)], mask: Option<&Path>) -> Result<Vec<Mask>> {
    match mask {
        Some(p) => {
            let m = Mask::from_image(&decode_image::<f64>(&read(p)?)?)?;
            Ok(vec![m; images.len()])
        }
        None => {
            let mut rng = Rng::new(ctx.cfg.completion.seed ^ MASK_STREAM);
            images
                .iter()
                .map(|(_, y)| {
                    let s = y.shape();
                    Ok(make_mask(ctx.cfg.mask, s[s.len() - 2], s[s.len() - 1], &mut rng)?)
                })
                .collect()
        }
    }
}

struct Completed {
    name: String,
    original: Tensor,
    corrupted: Tensor,
    output: Tensor,
}

fn run_completion(
    ctx: &Ctx,
    generator: Option<&Path>,
    critic: Option<&Path>,
    input: &Path,
    mask: Option<&Path>,
) -> Result<Vec<Completed>> {
    let gen = load_model(&ctx.ckpt(generator, "generator.wgck"), "generator")?;
    let critic = load_model(&ctx.ckpt(critic, "critic.wgck"), "critic")?;
    let images = list_images(input)?;
    let masks = masks_for(ctx, &images, mask)?;
    let ys: Vec<Tensor> = images.iter().map(|(_, y)| y.clone()).collect();
    let results = optimize_latent_batch(&ys, &masks, &gen, &critic, &ctx.cfg.completion)?;
    let logs = ctx.subdir("logs")?;
    let mut out = Vec::with_capacity(images.len());
    for (((name, y), m), r) in images.into_iter().zip(&masks).zip(results) {
        write(&logs.join(format!("{name}_completion.csv")), r.trace.to_csv())?;
        out.push(Completed {
            corrupted: inpaint_core::completion::apply_mask(m, &y)?,
            output: blend_reconstruct(&y, m, &r.generated)?,
            original: y,
            name,
        });
    }
    Ok(out)
}

fn save_image(dir: &Path, name: &str, img: &Tensor) -> Result<()> {
    write(&dir.join(format!("{name}.pgm")), encode_pgm(img)?)
}

pub fn complete(
    ctx: &Ctx,
    generator: Option<&Path>,
    critic: Option<&Path>,
    input: &Path,
    mask: Option<&Path>,
) -> Result<()> {
    let done = run_completion(ctx, generator, critic, input, mask)?;
    let images = ctx.subdir("images")?;
    for c in &done {
        save_image(&images, &format!("{}_orig", c.name), &c.original)?;
        save_image(&images, &format!("{}_input", c.name), &c.corrupted)?;
        save_image(&images, &format!("{}_output", c.name), &c.output)?;
    }
    eprintln!("completed {} image(s) into {}", done.len(), images.display());
    Ok(())
}

pub fn enhance(ctx: &Ctx, enhancer: Option<&Path>, input: &Path) -> Result<()> {
    let model = load_model(&ctx.ckpt(enhancer, "enhancer.wgck"), "enhancer")?;
    let images = ctx.subdir("images")?;
    for (name, y) in list_images(input)? {
        save_image(&images, &format!("{name}_enhanced"), &enhance_image(&model, &y)?)?;
    }
    Ok(())
}

pub fn pipeline(
    ctx: &Ctx,
    generator: Option<&Path>,
    critic: Option<&Path>,
    enhancer: Option<&Path>,
    input: &Path,
    mask: Option<&Path>,
) -> Result<()> {
    let model = load_model(&ctx.ckpt(enhancer, "enhancer.wgck"), "enhancer")?;
    let done = run_completion(ctx, generator, critic, input, mask)?;
    let images = ctx.subdir("images")?;
    for c in &done {
        save_image(&images, &format!("{}_orig", c.name), &c.original)?;
        save_image(&images, &format!("{}_input", c.name), &c.corrupted)?;
        save_image(&images, &format!("{}_completed", c.name), &c.output)?;
        save_image(&images, &format!("{}_output", c.name), &enhance_image(&model, &c.output)?)?;
    }
    eprintln!("completed and enhanced {} image(s) into {}", done.len(), images.display());
    Ok(())
}

pub fn evaluate(ctx: &Ctx, reference: &Path, candidate: &Path) -> Result<()> {
    let refs = list_images(reference)?;
    let mut report = QualityReport::default();
    for (name, r) in &refs {
        let matching = ["pgm", "ppm"]
            .iter()
            .map(|ext| candidate.join(format!("{name}.{ext}")))
            .find(|p| p.exists())
            .ok_or_else(|| CliError::Other(format!("no counterpart for {name} in {}", candidate.display())))?;
        let c = decode_image::<f64>(&read(&matching)?)?;
        let file = matching.file_name().and_then(|s| s.to_str()).unwrap_or(name);
        report.push(file, &to_255(r), &to_255(&c), &ctx.cfg.ssim)?;
    }
    let csv = report.to_csv();
    write(&ctx.subdir("logs")?.join("evaluate.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}
