#![allow(dead_code)]

use naboe::embeddings::EmbeddingMatrix;
use naboe::model::{
    loss, AttentionMode, Candidate, DocumentInput, Gradients, ModelConfig, ModelParams,
    Representation,
};
use rand::Rng;

pub const WORDS: usize = 25;
pub const ENTITIES: usize = 12;

fn matrix<R: Rng>(rng: &mut R, rows: usize, dim: usize) -> EmbeddingMatrix {
    let data = (0..rows * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    EmbeddingMatrix::from_vec(rows, dim, data).unwrap()
}

pub fn random_params<R: Rng>(rng: &mut R, dim: usize, classes: usize) -> ModelParams {
    ModelParams {
        word_embeddings: matrix(rng, WORDS, dim),
        entity_embeddings: matrix(rng, ENTITIES, dim),
        attention_weights: [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)],
        attention_bias: rng.gen_range(-1.0..1.0),
        classifier_weights: matrix(rng, classes, dim),
        classifier_bias: (0..classes).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    }
}

pub fn random_doc<R: Rng>(rng: &mut R, n: usize, k: usize, classes: usize) -> DocumentInput {
    DocumentInput {
        words: (0..n).map(|_| rng.gen_range(0..WORDS as u32)).collect(),
        candidates: (0..k)
            .map(|_| Candidate {
                entity: rng.gen_range(0..ENTITIES as u32),
                commonness: rng.gen_range(0.0..=1.0),
            })
            .collect(),
        label: Some(rng.gen_range(0..classes)),
    }
}

pub fn model(representation: Representation, attention: AttentionMode, dim: usize) -> ModelConfig {
    ModelConfig {
        representation,
        attention,
        dim,
    }
}

/// Number of scalar parameters.
pub fn num_params(p: &ModelParams) -> usize {
    p.word_embeddings.as_slice().len()
        + p.entity_embeddings.as_slice().len()
        + p.attention_weights.len()
        + 1
        + p.classifier_weights.as_slice().len()
        + p.classifier_bias.len()
}

/// Mutable access to the `i`-th scalar parameter in a fixed flattening order.
pub fn param_mut(p: &mut ModelParams, i: usize) -> &mut f64 {
    p.word_embeddings
        .as_mut_slice()
        .iter_mut()
        .chain(p.entity_embeddings.as_mut_slice())
        .chain(p.attention_weights.iter_mut())
        .chain(std::iter::once(&mut p.attention_bias))
        .chain(p.classifier_weights.as_mut_slice())
        .chain(p.classifier_bias.iter_mut())
        .nth(i)
        .expect("parameter index in range")
}

/// Dense gradient in the same flattening order as [`param_mut`].
pub fn flatten_gradients(g: &Gradients, p: &ModelParams) -> Vec<f64> {
    let dim = p.dim();
    let mut out = Vec::with_capacity(num_params(p));
    for (rows, matrix) in [
        (&g.word_embeddings, &p.word_embeddings),
        (&g.entity_embeddings, &p.entity_embeddings),
    ] {
        let mut dense = vec![0.0; matrix.rows() * dim];
        for (r, row) in rows {
            dense[*r as usize * dim..(*r as usize + 1) * dim].copy_from_slice(row);
        }
        out.extend(dense);
    }
    out.extend(g.attention_weights);
    out.push(g.attention_bias);
    out.extend(&g.classifier_weights);
    out.extend(&g.classifier_bias);
    out
}

/// Central finite-difference gradient of the loss.
pub fn numeric_gradient(
    doc: &DocumentInput,
    params: &ModelParams,
    config: &ModelConfig,
    step: f64,
) -> Vec<f64> {
    let mut p = params.clone();
    (0..num_params(params))
        .map(|i| {
            let orig = *param_mut(&mut p, i);
            *param_mut(&mut p, i) = orig + step;
            let plus = loss(doc, &p, config).unwrap();
            *param_mut(&mut p, i) = orig - step;
            let minus = loss(doc, &p, config).unwrap();
            *param_mut(&mut p, i) = orig;
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub fn synthetic_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data/synthetic")
}

pub fn toy_wiki_files() -> Vec<std::path::PathBuf> {
    sorted_files(&std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/toy_wiki"))
}

pub fn sorted_files(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    files
}

/// Temporary directory holding a dictionary built from the bundled synthetic
/// wikitext and a copy of the bundled config pointing at it. Returns the
/// directory and the config path.
pub fn synthetic_workspace() -> (tempfile::TempDir, std::path::PathBuf) {
    use naboe::config::PipelineConfig;
    use naboe::pipeline;

    let tmp = tempfile::tempdir().unwrap();
    let src = synthetic_dir();
    let wiki = sorted_files(&src.join("wiki"));
    let anchors = tmp.path().join("anchors.tsv");
    let occurrences = tmp.path().join("occurrences.tsv");
    pipeline::extract_anchors_cmd(&wiki, &anchors, &occurrences).unwrap();
    pipeline::build_dict_cmd(
        &anchors,
        &occurrences,
        0.01,
        0.03,
        &tmp.path().join("dictionary.tsv"),
    )
    .unwrap();
    let mut config = PipelineConfig::load(&src.join("config.toml")).unwrap();
    config.paths.dictionary = "dictionary.tsv".into();
    config.paths.train = src.join("train.tsv");
    config.paths.test = Some(src.join("test.tsv"));
    config.paths.output_dir = "out".into();
    let path = tmp.path().join("config.toml");
    std::fs::write(&path, config.to_toml()).unwrap();
    (tmp, path)
}
