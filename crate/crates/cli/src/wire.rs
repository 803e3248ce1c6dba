//! JSON request and response types of the inference service and their
//! mapping onto the core applications.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use idblend::apps::{self, MorphNoise};
use idblend::identity::{
    blend_constant, constant_id, decode_indexed_png, decode_label_png, decode_raster, embed_ids, mask_id, ramp_id,
    Axis,
};
use idblend::render::RenderJob;
use idblend::{BinaryMask, Error, IdSource, IdentityMap, IdentitySchedule, ImageBuffer, Model, NoiseMode};

/// An error with the HTTP status it maps to.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    /// The violated invariant or failure class, e.g. `partition`.
    pub kind: String,
    pub error: String,
}

impl ApiError {
    pub fn new(status: u16, kind: &str, error: impl Into<String>) -> Self {
        ApiError {
            status,
            kind: kind.into(),
            error: error.into(),
        }
    }

    pub fn bad_request(kind: &str, error: impl Into<String>) -> Self {
        Self::new(400, kind, error)
    }

    pub fn not_found(error: impl Into<String>) -> Self {
        Self::new(404, "not_found", error)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, kind) = match &e {
            Error::InvalidInput(_) => (400, "invalid_input"),
            Error::Geometry(_) => (400, "size"),
            Error::TooSmall { .. } => (400, "size"),
            Error::Simplex(_) => (400, "simplex"),
            Error::Partition(_) => (400, "partition"),
            Error::Config(_) => (400, "config"),
            Error::Image(_) => (400, "image"),
            Error::Serde(_) => (400, "json"),
            Error::Version { .. } => (400, "version"),
            Error::NotCategorical(_) => (422, "not_categorical"),
            Error::MissingFile(_) | Error::Corrupt { .. } | Error::Io { .. } => (500, "bundle"),
            Error::Numeric(_) | Error::Diverged { .. } => (500, "numeric"),
        };
        ApiError::new(status, kind, e.to_string())
    }
}

pub type ApiResult<T> = std::result::Result<T, ApiError>;

fn b64_decode(s: &str, what: &str) -> ApiResult<Vec<u8>> {
    let s = s.strip_prefix("data:image/png;base64,").unwrap_or(s);
    B64.decode(s.trim())
        .map_err(|e| ApiError::bad_request("encoding", format!("{what}: invalid base64 ({e})")))
}

pub fn b64_png(img: &ImageBuffer) -> String {
    B64.encode(img.to_png_bytes())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisSpec {
    #[default]
    Horizontal,
    Vertical,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskFormat {
    /// Palette or grayscale PNG whose pixel values are identity indices.
    IndexedPng,
    /// `BGID` float raster with one weight plane per identity.
    Raster,
}

fn third() -> f64 {
    1.0 / 3.0
}

fn two_thirds() -> f64 {
    2.0 / 3.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum IdMapSpec {
    Constant {
        id: usize,
    },
    Blend {
        weights: Vec<f64>,
    },
    /// Linear transition from `from` to `to` between the fractions `start`
    /// and `end` of the axis.
    Ramp {
        from: usize,
        to: usize,
        #[serde(default)]
        axis: AxisSpec,
        #[serde(default = "third")]
        start: f64,
        #[serde(default = "two_thirds")]
        end: f64,
    },
    Mask {
        format: MaskFormat,
        data: String,
    },
    /// One binary PNG per identity (non-zero = claimed); together they must
    /// cover every pixel exactly once.
    Regions {
        regions: Vec<String>,
    },
}

fn decode_binary(data: &str, what: &str) -> ApiResult<(Vec<bool>, (usize, usize))> {
    let (labels, size) = decode_label_png(&b64_decode(data, what)?)?;
    Ok((labels.into_iter().map(|l| l != 0).collect(), size))
}

impl IdMapSpec {
    /// The map at `size`; masks keep their own size.
    pub fn resolve(&self, num_ids: usize, size: (usize, usize)) -> ApiResult<IdentityMap> {
        let check = |k: usize| -> ApiResult<()> {
            if k >= num_ids {
                Err(ApiError::bad_request("invalid_input", format!("identity {k} out of range for K = {num_ids}")))
            } else {
                Ok(())
            }
        };
        let map = match self {
            IdMapSpec::Constant { id } => {
                check(*id)?;
                constant_id(*id, num_ids, size)?
            }
            IdMapSpec::Blend { weights } => {
                if weights.len() != num_ids {
                    return Err(ApiError::bad_request(
                        "simplex",
                        format!("{} blend weights for K = {num_ids}", weights.len()),
                    ));
                }
                blend_constant(weights, size)?
            }
            IdMapSpec::Ramp { from, to, axis, start, end } => {
                check(*from)?;
                check(*to)?;
                let ax = match axis {
                    AxisSpec::Horizontal => Axis::Horizontal,
                    AxisSpec::Vertical => Axis::Vertical,
                };
                let r = ramp_id(ax, (*start, *end), size)?;
                if from == to {
                    constant_id(*from, num_ids, size)?
                } else {
                    embed_ids(&r, &[*from, *to], num_ids)?
                }
            }
            IdMapSpec::Mask { format, data } => {
                let bytes = b64_decode(data, "mask")?;
                match format {
                    MaskFormat::IndexedPng => decode_indexed_png(&bytes, num_ids)?,
                    MaskFormat::Raster => {
                        let m = decode_raster(&bytes)?;
                        if m.num_ids() != num_ids {
                            return Err(ApiError::bad_request(
                                "invalid_input",
                                format!("raster has K = {}, model has K = {num_ids}", m.num_ids()),
                            ));
                        }
                        m
                    }
                }
            }
            IdMapSpec::Regions { regions } => {
                if regions.len() != num_ids {
                    return Err(ApiError::bad_request(
                        "partition",
                        format!("{} region masks for K = {num_ids}", regions.len()),
                    ));
                }
                let mut masks = vec![];
                let mut msize = None;
                for (k, r) in regions.iter().enumerate() {
                    let (m, s) = decode_binary(r, &format!("region {k}"))?;
                    if msize.is_some_and(|p| p != s) {
                        return Err(ApiError::bad_request("size", "region masks differ in size"));
                    }
                    msize = Some(s);
                    masks.push(m);
                }
                mask_id(&masks, msize.unwrap_or((0, 0)))?
            }
        };
        Ok(map)
    }

    pub fn is_mask(&self) -> bool {
        matches!(self, IdMapSpec::Mask { .. } | IdMapSpec::Regions { .. })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSpec {
    #[default]
    Random,
    Reconstruction,
    /// Reconstruction noise under `faithful_mask`, random elsewhere.
    Mixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Sample,
    Reconstruct,
    Meld,
    Morph,
    Fuse,
    Spatial,
    Edit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id_map: Option<IdMapSpec>,
    /// One map per scale, finest first; replaces `id_map` when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Vec<IdMapSpec>>,
    /// `[height, width]`; defaults to the training size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<[usize; 2]>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub noise: NoiseSpec,
    /// Base64 PNG; non-zero pixels use the reconstruction noise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub faithful_mask: Option<String>,
    /// Identity for `reconstruct` and `edit`; a constant map elsewhere when
    /// `id_map` is absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ids: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transition_frac: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structure: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub texture: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transition_scale: Option<usize>,
    /// Base64 PNG injected for `edit` (or any mode that accepts it).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inject_scale: Option<usize>,
    /// Adds `timing_ms` to the response (which then stops being reproducible).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub timing: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub image: String,
    pub request_echo: GenerateRequest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing_ms: Option<u64>,
}

fn need<T: Clone>(v: &Option<T>, field: &str, mode: Mode) -> ApiResult<T> {
    v.clone().ok_or_else(|| {
        ApiError::bad_request("invalid_input", format!("mode {mode:?} needs the field `{field}`"))
    })
}

fn faithful(req: &GenerateRequest, size: (usize, usize)) -> ApiResult<NoiseMode> {
    Ok(match req.noise {
        NoiseSpec::Random => NoiseMode::Random,
        NoiseSpec::Reconstruction => NoiseMode::Reconstruction,
        NoiseSpec::Mixed => {
            let data = need(&req.faithful_mask, "faithful_mask", req.mode)?;
            let (bits, s) = decode_binary(&data, "faithful_mask")?;
            if s != size {
                return Err(ApiError::bad_request(
                    "size",
                    format!("faithful mask is {s:?}, output is {size:?}"),
                ));
            }
            NoiseMode::Faithful(BinaryMask::new(s.0, s.1, bits)?)
        }
    })
}

fn output_size(model: &Model, req: &GenerateRequest) -> (usize, usize) {
    req.size.map(|[h, w]| (h, w)).unwrap_or_else(|| model.plan.full_size())
}

fn id_source(model: &Model, req: &GenerateRequest, sizes: &[(usize, usize)]) -> ApiResult<IdSource> {
    let k = model.num_ids;
    if let Some(sched) = &req.schedule {
        if sched.len() != sizes.len() {
            return Err(ApiError::bad_request(
                "invalid_input",
                format!("schedule has {} maps for {} scales", sched.len(), sizes.len()),
            ));
        }
        let per_scale = sched
            .iter()
            .zip(sizes)
            .map(|(s, &sz)| {
                let m = s.resolve(k, sz)?;
                Ok(if m.size() == sz { m } else { idblend::identity::resample_id(&m, sz)? })
            })
            .collect::<ApiResult<Vec<_>>>()?;
        return Ok(IdSource::Schedule(IdentitySchedule { per_scale }));
    }
    let spec = match (&req.id_map, req.id) {
        (None, Some(id)) => IdMapSpec::Constant { id },
        _ => need(&req.id_map, "id_map", req.mode)?,
    };
    Ok(match spec {
        IdMapSpec::Constant { id } => {
            model.check_id(id)?;
            IdSource::Constant(id)
        }
        IdMapSpec::Blend { .. } => {
            let m = spec.resolve(k, (1, 1))?;
            IdSource::Blend(m.pixel(0, 0))
        }
        _ => IdSource::Schedule(IdentitySchedule::uniform(&spec.resolve(k, sizes[0])?, sizes)?),
    })
}

fn decode_image(data: &str) -> ApiResult<ImageBuffer> {
    Ok(ImageBuffer::from_encoded(&b64_decode(data, "image")?)?)
}

/// Runs one request against a loaded model.
pub fn execute(model: &Model, req: &GenerateRequest) -> ApiResult<ImageBuffer> {
    let mode = req.mode;
    let size = output_size(model, req);
    let img = match mode {
        Mode::Sample => {
            let sizes = apps::level_sizes(model, size);
            let ids = id_source(model, req, &sizes)?;
            let noise = faithful(req, size)?;
            let mut job = RenderJob::new(model, sizes, ids, noise, req.seed)?;
            if let Some(data) = &req.image {
                let m = req.inject_scale.unwrap_or_else(|| apps::default_inject_level(model));
                job = job.with_injection(m, decode_image(data)?.tensor())?;
            }
            ImageBuffer::from_tensor_clamped(job.render()?)
        }
        Mode::Reconstruct => apps::reconstruct(model, need(&req.id, "id", mode)?)?,
        Mode::Meld => {
            let ids = req.ids.clone().unwrap_or_else(|| vec![0, 1]);
            let w = req.out_width.unwrap_or(size.1);
            apps::meld(model, &ids, w, req.transition_frac.unwrap_or(1.0 / 3.0), req.seed)?
        }
        Mode::Morph => {
            let w = need(&req.weights, "weights", mode)?;
            let noise = match req.noise {
                NoiseSpec::Random => MorphNoise::Random,
                NoiseSpec::Reconstruction => MorphNoise::Reconstruction,
                NoiseSpec::Mixed => {
                    return Err(ApiError::bad_request("invalid_input", "morph takes random or reconstruction noise"))
                }
            };
            apps::morph(model, &[w], noise, req.seed)?.remove(0)
        }
        Mode::Fuse => apps::fuse(
            model,
            need(&req.structure, "structure", mode)?,
            need(&req.texture, "texture", mode)?,
            need(&req.transition_scale, "transition_scale", mode)?,
            size,
            req.seed,
        )?,
        Mode::Spatial => {
            let spec = need(&req.id_map, "id_map", mode)?;
            let map = spec.resolve(model.num_ids, size)?;
            let mask = match faithful(req, map.size())? {
                NoiseMode::Faithful(m) => Some(m),
                NoiseMode::Reconstruction => Some(BinaryMask::filled(map.height(), map.width(), true)),
                _ => None,
            };
            apps::spatial_sample(model, &map, mask.as_ref(), req.seed)?
        }
        Mode::Edit => {
            let edited = decode_image(&need(&req.image, "image", mode)?)?;
            let map = match &req.id_map {
                Some(s) => s.resolve(model.num_ids, model.plan.full_size())?,
                None => constant_id(req.id.unwrap_or(0), model.num_ids, (1, 1))?,
            };
            let m = req.inject_scale.unwrap_or_else(|| apps::default_inject_level(model));
            apps::edit(model, &edited, m, &map, req.seed)?
        }
    };
    Ok(img)
}

/// A morph weight entry: a scalar `t` blends `(1 - t)` of `from` with `t` of
/// `to`; a vector is used as is.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightEntry {
    Scalar(f64),
    Vector(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MorphRequest {
    pub weights_sequence: Vec<WeightEntry>,
    #[serde(default)]
    pub from: usize,
    #[serde(default = "default_to")]
    pub to: usize,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub seed: u64,
}

fn default_to() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MorphResponse {
    pub frames: Vec<String>,
}

pub fn morph_weights(entries: &[WeightEntry], from: usize, to: usize, num_ids: usize) -> ApiResult<Vec<Vec<f64>>> {
    entries
        .iter()
        .map(|e| match e {
            WeightEntry::Vector(v) => Ok(v.clone()),
            WeightEntry::Scalar(t) => {
                if from >= num_ids || to >= num_ids {
                    return Err(ApiError::bad_request("invalid_input", "morph endpoints out of range"));
                }
                if !(0.0..=1.0).contains(t) {
                    return Err(ApiError::bad_request("simplex", format!("morph weight {t} outside [0, 1]")));
                }
                let mut v = vec![0.0; num_ids];
                v[from] += 1.0 - t;
                v[to] += t;
                Ok(v)
            }
        })
        .collect()
}

pub fn execute_morph(model: &Model, req: &MorphRequest) -> ApiResult<Vec<ImageBuffer>> {
    let weights = morph_weights(&req.weights_sequence, req.from, req.to, model.num_ids)?;
    let noise = match req.noise {
        NoiseSpec::Random => MorphNoise::Random,
        NoiseSpec::Reconstruction => MorphNoise::Reconstruction,
        NoiseSpec::Mixed => return Err(ApiError::bad_request("invalid_input", "morph takes random or reconstruction noise")),
    };
    Ok(apps::morph(model, &weights, noise, req.seed)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub model_id: String,
    #[serde(rename = "K")]
    pub num_ids: usize,
    pub scales: usize,
    pub size: [usize; 2],
    pub thumbnails: Vec<String>,
}
