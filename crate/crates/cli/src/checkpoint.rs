//! Checkpoint plumbing: Gaussian clouds as PLY snapshots and deformation
//! models as "PGSW" named-tensor files. All writes are atomic.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pgst_core::deform::{EncoderConfig, MgfConfig, MgfFace, MgfMouth, TriPlaneHashEncoder};
use pgst_core::gsmath::GaussianCloud;
use pgst_core::io::{self, NamedTensor};
use pgst_core::train::{DeformModel, MgfHead};
use pgst_core::{Error, Result};

pub fn save_cloud(path: &Path, cloud: &GaussianCloud) -> Result<()> {
    io::write_atomic(path, &io::write_ply(cloud)?)
}

pub fn load_cloud(path: &Path) -> Result<GaussianCloud> {
    io::read_ply(&std::fs::read(path)?)
}

fn usize_at(t: &NamedTensor, i: usize) -> usize {
    t.values[i] as usize
}

pub fn save_model(path: &Path, model: &DeformModel) -> Result<()> {
    let enc = &model.encoder;
    let kind = match &model.head {
        MgfHead::Mouth(_) => 0.0,
        MgfHead::Face(_) => 1.0,
    };
    let params = model.mgf_params();
    let tensors = vec![
        NamedTensor::new(
            "encoder/meta",
            vec![5],
            vec![
                enc.levels as f64,
                enc.features as f64,
                enc.table_size as f64,
                enc.resolutions[0] as f64,
                *enc.resolutions.last().unwrap() as f64,
            ],
        ),
        NamedTensor::new(
            "encoder/resolutions",
            vec![enc.resolutions.len()],
            enc.resolutions.iter().map(|&r| r as f64).collect(),
        ),
        NamedTensor::new("encoder/bbox_min", vec![3], enc.bbox_min.iter().copied().collect()),
        NamedTensor::new("encoder/bbox_max", vec![3], enc.bbox_max.iter().copied().collect()),
        NamedTensor::new("encoder/tables", vec![enc.tables.len()], enc.tables.clone()),
        NamedTensor::new(
            "mgf/meta",
            vec![6],
            vec![
                kind,
                head_cfg(&model.head).proj_dim as f64,
                head_cfg(&model.head).hidden as f64,
                head_cfg(&model.head).hidden_layers as f64,
                head_dims(model).0 as f64,
                head_dims(model).1 as f64,
            ],
        ),
        NamedTensor::new("mgf/params", vec![params.len()], params),
    ];
    io::write_atomic(path, &io::write_tensors(&tensors)?)
}

pub fn load_model(path: &Path) -> Result<DeformModel> {
    let tensors = io::read_tensors(&std::fs::read(path)?)?;
    let get = |name: &str| -> Result<&NamedTensor> {
        tensors.iter().find(|t| t.name == name).ok_or_else(|| Error::Format {
            what: "PGSW".into(),
            detail: format!("missing tensor {name}"),
            offset: 0,
        })
    };
    let meta = get("encoder/meta")?;
    let enc_cfg = EncoderConfig {
        levels: usize_at(meta, 0),
        features: usize_at(meta, 1),
        table_size: usize_at(meta, 2),
        base_resolution: usize_at(meta, 3),
        max_resolution: usize_at(meta, 4),
    };
    let v3 = |t: &NamedTensor| nalgebra::Vector3::new(t.values[0], t.values[1], t.values[2]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut encoder = TriPlaneHashEncoder::new(
        &enc_cfg,
        v3(get("encoder/bbox_min")?),
        v3(get("encoder/bbox_max")?),
        &mut rng,
    );
    let tables = get("encoder/tables")?;
    if tables.values.len() != encoder.tables.len() {
        return Err(Error::Format {
            what: "PGSW".into(),
            detail: format!(
                "encoder table size {} does not match meta-implied {}",
                tables.values.len(),
                encoder.tables.len()
            ),
            offset: 0,
        });
    }
    encoder.tables = tables.values.clone();
    let res = get("encoder/resolutions")?;
    if res.values.len() != encoder.resolutions.len() {
        return Err(Error::Format {
            what: "PGSW".into(),
            detail: "encoder resolution count does not match meta".into(),
            offset: 0,
        });
    }
    encoder.resolutions = res.values.iter().map(|&v| v as usize).collect();

    let mm = get("mgf/meta")?;
    let mgf_cfg = MgfConfig {
        proj_dim: usize_at(mm, 1),
        hidden: usize_at(mm, 2),
        hidden_layers: usize_at(mm, 3),
    };
    let (dim_audio, dim_expr) = (usize_at(mm, 4), usize_at(mm, 5));
    let head = if mm.values[0] == 0.0 {
        MgfHead::Mouth(MgfMouth::new(
            &mgf_cfg,
            encoder.output_dim(),
            dim_audio,
            false,
            &mut rng,
        ))
    } else {
        MgfHead::Face(MgfFace::new(
            &mgf_cfg,
            encoder.output_dim(),
            dim_audio,
            dim_expr,
            false,
            &mut rng,
        ))
    };
    let mut model = DeformModel { encoder, head };
    let params = get("mgf/params")?;
    if params.values.len() != model.mgf_params().len() {
        return Err(Error::Format {
            what: "PGSW".into(),
            detail: format!(
                "mgf parameter count {} does not match meta-implied {}",
                params.values.len(),
                model.mgf_params().len()
            ),
            offset: 0,
        });
    }
    model.set_mgf_params(&params.values);
    Ok(model)
}

fn head_cfg(head: &MgfHead) -> MgfConfig {
    match head {
        MgfHead::Mouth(h) => h.config(),
        MgfHead::Face(h) => h.config(),
    }
}

fn head_dims(model: &DeformModel) -> (usize, usize) {
    match &model.head {
        MgfHead::Mouth(h) => (h.dim_audio(), 0),
        MgfHead::Face(h) => (h.dim_audio(), h.dim_expr()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use pgst_core::synth;

    #[test]
    fn model_round_trips_through_pgsw() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let encoder = TriPlaneHashEncoder::new(
            &EncoderConfig::default(),
            nalgebra::Vector3::new(-1.0, -1.0, -0.5),
            nalgebra::Vector3::new(1.0, 1.0, 0.5),
            &mut rng,
        );
        let head = MgfMouth::new(&MgfConfig::default(), encoder.output_dim(), 2, false, &mut rng);
        let model = DeformModel {
            encoder,
            head: MgfHead::Mouth(head),
        };
        let path = dir.path().join("model.pgsw");
        save_model(&path, &model).unwrap();
        let back = load_model(&path).unwrap();
        // f32 storage: parameters agree to single precision.
        for (a, b) in model.mgf_params().iter().zip(back.mgf_params()) {
            assert!((a - b).abs() <= a.abs() * 1e-6 + 1e-7);
        }
        // Write → read → write is byte-identical.
        let first = std::fs::read(&path).unwrap();
        save_model(&path, &back).unwrap();
        assert_eq!(first, std::fs::read(&path).unwrap());
    }

    #[test]
    fn cloud_round_trips_through_ply() {
        let dir = tempfile::tempdir().unwrap();
        let (cloud, _) = synth::random_scene(5, 9, 16, 16);
        let path = dir.path().join("cloud.ply");
        save_cloud(&path, &cloud).unwrap();
        let back = load_cloud(&path).unwrap();
        let first = std::fs::read(&path).unwrap();
        save_cloud(&path, &back).unwrap();
        assert_eq!(first, std::fs::read(&path).unwrap());
    }
}
