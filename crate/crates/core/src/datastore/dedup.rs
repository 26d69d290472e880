use std::ops::Range;

use super::catalog::Catalog;
use crate::error::{invalid, Result};

struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Links every pair whose Euclidean distance over `slice` is below `eps`.
/// Records are swept in order of their first slice coordinate, which bounds
/// the distance from below.
fn link_close_pairs(catalog: &Catalog, slice: Range<usize>, eps: f64, sets: &mut DisjointSet) {
    let n = catalog.len();
    let key = |i: usize| catalog.get(i).embedding[slice.start];
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| key(a).total_cmp(&key(b)).then(a.cmp(&b)));
    let eps2 = eps * eps;
    for (pos, &i) in order.iter().enumerate() {
        let a = &catalog.get(i).embedding[slice.clone()];
        for &j in &order[pos + 1..] {
            if key(j) - key(i) >= eps {
                break;
            }
            if sq_dist(a, &catalog.get(j).embedding[slice.clone()]) < eps2 {
                sets.union(i, j);
            }
        }
    }
}

/// Collapses near-duplicate groups to their most complete record.
///
/// Two records are near-duplicates when either their image-embedding or
/// their text-embedding distance is below its threshold; groups are the
/// transitive closure of that relation. Each group keeps the record with the
/// most attributes filled in, ties going to the smaller id. Survivors keep
/// their original relative order.
pub fn dedup_catalog(catalog: &Catalog, image_eps: f64, text_eps: f64) -> Result<Catalog> {
    if !(image_eps > 0.0) || !(text_eps > 0.0) {
        return Err(invalid(format!(
            "dedup thresholds must be positive, got image {image_eps}, text {text_eps}"
        )));
    }
    let n = catalog.len();
    let mut sets = DisjointSet::new(n);
    let slices = catalog.slices().clone();
    link_close_pairs(catalog, slices.image, image_eps, &mut sets);
    link_close_pairs(catalog, slices.text, text_eps, &mut sets);

    let mut best: Vec<Option<usize>> = vec![None; n];
    for i in 0..n {
        let root = sets.find(i);
        let better = match best[root] {
            None => true,
            Some(cur) => {
                let (ri, rc) = (catalog.get(i), catalog.get(cur));
                (ri.filled_attributes(), std::cmp::Reverse(&ri.id))
                    > (rc.filled_attributes(), std::cmp::Reverse(&rc.id))
            }
        };
        if better {
            best[root] = Some(i);
        }
    }
    let mut keep: Vec<usize> = best.into_iter().flatten().collect();
    keep.sort_unstable();
    let records = keep.into_iter().map(|i| catalog.get(i).clone()).collect();
    Catalog::with_slices(records, catalog.dim(), catalog.slices().clone())
}
