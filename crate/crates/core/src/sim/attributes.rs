//! Synthetic catalogs with structured attributes for exercising the imputer.
//!
//! Every object has a latent vector `z`. The embedding sees only the first
//! `visible_latent` coordinates (through a random linear map, plus noise);
//! price, mass, materials, category and ratings depend on all of `z`. So the
//! other attributes carry information the embedding lacks, which is what
//! makes filling them in worthwhile.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gumbel, Poisson, StandardNormal};

use crate::datastore::{Catalog, Materials, ObjectRecord};
use crate::error::{invalid, Result};
use crate::rng;
use crate::taxonomy::Taxonomy;

const MATERIALS_TSV: &str = "\
material\t\tMaterial\n\
plastic\tmaterial\tPlastic\n\
acrylic\tplastic\tAcrylic\n\
polyester\tplastic\tPolyester\n\
metal\tmaterial\tMetal\n\
steel\tmetal\tSteel\n\
aluminum\tmetal\tAluminum\taluminium\n\
wood\tmaterial\tWood\n\
oak\twood\tOak\n\
pine\twood\tPine\n\
cotton\tmaterial\tCotton\n";

const CATEGORIES_TSV: &str = "\
all\t\tAll\n\
home\tall\tHome\n\
kitchen\thome\tKitchen\n\
decor\thome\tDecor\n\
storage\thome\tStorage\n\
tools\tall\tTools\n\
hand\ttools\tHand Tools\n\
power\ttools\tPower Tools\n\
toys\tall\tToys\n\
puzzles\ttoys\tPuzzles\n\
outdoor\ttoys\tOutdoor Play\n";

pub fn sample_material_taxonomy() -> Taxonomy {
    Taxonomy::parse(MATERIALS_TSV).expect("built-in material taxonomy is valid")
}

pub fn sample_category_taxonomy() -> Taxonomy {
    Taxonomy::parse(CATEGORIES_TSV).expect("built-in category taxonomy is valid")
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributeSpec {
    pub n_objects: usize,
    pub latent_dim: usize,
    /// Latent coordinates the embedding can see.
    pub visible_latent: usize,
    pub embedding_dim: usize,
    pub embedding_noise: f64,
    /// Noise on log price and log mass.
    pub value_noise: f64,
    /// Gumbel scale for the material / category choices.
    pub choice_noise: f64,
    /// Chance a listing names only the top-level material.
    pub coarse_material_rate: f64,
    pub mean_reviews: f64,
    pub seed: u64,
}

impl Default for AttributeSpec {
    fn default() -> Self {
        Self {
            n_objects: 4000,
            latent_dim: 8,
            visible_latent: 3,
            embedding_dim: 12,
            embedding_noise: 0.3,
            value_noise: 0.2,
            choice_noise: 0.3,
            coarse_material_rate: 0.25,
            mean_reviews: 30.0,
            seed: crate::datastore::DEFAULT_SEED,
        }
    }
}

pub struct AttributeWorld {
    /// Every attribute observed.
    pub complete: Catalog,
    pub materials: Taxonomy,
    pub categories: Taxonomy,
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..cols).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect())
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Child of `node` with the largest `score + gumbel noise`.
fn choose_child(tax: &Taxonomy, node: usize, z: &[f64], weights: &[Vec<f64>], noise: &Gumbel<f64>, rng: &mut ChaCha8Rng) -> Option<usize> {
    tax.children(node)
        .iter()
        .map(|&c| (c, dot(&weights[c], z) + noise.sample(rng)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(c, _)| c)
}

pub fn attribute_catalog(spec: &AttributeSpec) -> Result<AttributeWorld> {
    if spec.visible_latent == 0 || spec.visible_latent > spec.latent_dim {
        return Err(invalid("visible_latent must be in 1..=latent_dim"));
    }
    if spec.n_objects < 100 {
        return Err(invalid("n_objects must be at least 100"));
    }
    let materials = sample_material_taxonomy();
    let categories = sample_category_taxonomy();
    let mut rng = rng::seeded(spec.seed, "attr-world");
    let l = spec.latent_dim;
    let embed_map = gaussian_matrix(&mut rng, spec.embedding_dim, spec.visible_latent, 1.0);
    let price_w = gaussian_matrix(&mut rng, 1, l, 0.5).remove(0);
    let mass_w = gaussian_matrix(&mut rng, 1, l, 0.5).remove(0);
    let mat_w = gaussian_matrix(&mut rng, materials.len(), l, 1.0);
    let cat_w = gaussian_matrix(&mut rng, categories.len(), l, 1.0);
    let rate_w = gaussian_matrix(&mut rng, 5, l, 0.4);
    let rate_base = [-1.5, -1.2, -0.5, 0.4, 1.0];
    let gumbel = Gumbel::new(0.0, spec.choice_noise.max(1e-12)).map_err(|e| invalid(e.to_string()))?;
    let poisson = Poisson::new(spec.mean_reviews.max(1e-9)).map_err(|e| invalid(e.to_string()))?;

    let mut records = Vec::with_capacity(spec.n_objects);
    for i in 0..spec.n_objects {
        let z: Vec<f64> = (0..l).map(|_| rng.sample(StandardNormal)).collect();
        let embedding: Vec<f64> = embed_map
            .iter()
            .map(|row| dot(row, &z[..spec.visible_latent]) + spec.embedding_noise * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mut o = ObjectRecord::new(format!("item{i:05}"), format!("item {i}"), embedding);
        o.price = Some((3.0 + dot(&price_w, &z) + spec.value_noise * rng.sample::<f64, _>(StandardNormal)).exp());
        o.mass_kg = Some((dot(&mass_w, &z) + spec.value_noise * rng.sample::<f64, _>(StandardNormal)).exp());

        let top = choose_child(&materials, materials.root(), &z, &mat_w, &gumbel, &mut rng).unwrap();
        let named = match choose_child(&materials, top, &z, &mat_w, &gumbel, &mut rng) {
            Some(sub) if !rng.random_bool(spec.coarse_material_rate) => sub,
            _ => top,
        };
        o.materials = Some(Materials::Names(vec![materials.id(named).to_string()]));

        let mut node = categories.root();
        let mut path = vec![categories.id(node).to_string()];
        while let Some(c) = choose_child(&categories, node, &z, &cat_w, &gumbel, &mut rng) {
            path.push(categories.id(c).to_string());
            node = c;
        }
        o.category_path = Some(path);

        let logits: Vec<f64> = rate_w.iter().zip(rate_base).map(|(w, b)| b + dot(w, &z)).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
        let s: f64 = e.iter().sum();
        let probs: Vec<f64> = e.iter().map(|v| v / s).collect();
        let n_reviews = 1 + poisson.sample(&mut rng) as u64;
        let mut hist = [0u64; 5];
        for _ in 0..n_reviews {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut star = 4;
            for (k, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    star = k;
                    break;
                }
            }
            hist[star] += 1;
        }
        o.ratings_hist = Some(hist);
        o.num_reviews = Some(n_reviews);
        records.push(o);
    }
    Ok(AttributeWorld {
        complete: Catalog::from_records(records, spec.embedding_dim)?,
        materials,
        categories,
    })
}

/// Hides each attribute of each object independently with probability
/// `rate` (missing completely at random).
pub fn hide_mcar(catalog: &Catalog, rate: f64, seed: u64) -> Result<Catalog> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(invalid(format!("missing rate must be in [0, 1], got {rate}")));
    }
    let mut rng = rng::seeded(seed, "attr-mcar");
    let records = catalog
        .records()
        .iter()
        .map(|o| {
            let mut o = o.clone();
            if rng.random_bool(rate) {
                o.price = None;
            }
            if rng.random_bool(rate) {
                o.mass_kg = None;
            }
            if rng.random_bool(rate) {
                o.materials = None;
            }
            if rng.random_bool(rate) {
                o.category_path = None;
            }
            if rng.random_bool(rate) {
                o.ratings_hist = None;
                o.num_reviews = None;
            }
            o
        })
        .collect();
    Catalog::with_slices(records, catalog.dim(), catalog.slices().clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_is_complete_and_consistent() {
        let w = attribute_catalog(&AttributeSpec {
            n_objects: 200,
            ..Default::default()
        })
        .unwrap();
        for o in w.complete.records() {
            let hist = o.ratings_hist.unwrap();
            assert_eq!(hist.iter().sum::<u64>(), o.num_reviews.unwrap());
            w.categories.validate_path(o.category_path.as_ref().unwrap()).unwrap();
            assert!(o.price.unwrap() > 0.0 && o.mass_kg.unwrap() > 0.0);
        }
    }

    #[test]
    fn mcar_rate_is_respected() {
        let w = attribute_catalog(&AttributeSpec {
            n_objects: 2000,
            ..Default::default()
        })
        .unwrap();
        let hidden = hide_mcar(&w.complete, 0.3, 1).unwrap();
        let missing = hidden.records().iter().filter(|o| o.price.is_none()).count();
        assert!((500..700).contains(&missing), "{missing}");
    }
}
