//! Open-vocabulary retrieval over a finalized map, and the compact map
//! rendering handed to a language model for spatial questions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::fusion::cosine;
use crate::scene::{Embedding, GlobalId, InstanceMap};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedInstance {
    pub global_id: GlobalId,
    pub score: f64,
}

/// Instances ranked by cosine similarity to a query embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub best: GlobalId,
    /// Score descending, ties by ascending ID.
    pub ranked: Vec<RankedInstance>,
}

impl QueryResult {
    pub fn scores(&self) -> BTreeMap<GlobalId, f64> {
        self.ranked.iter().map(|r| (r.global_id, r.score)).collect()
    }

    /// First `n` entries (all when `n` exceeds the instance count).
    pub fn top(&self, n: usize) -> &[RankedInstance] {
        &self.ranked[..n.min(self.ranked.len())]
    }
}

/// Score every instance against `query`. Never modifies the map.
pub fn query(map: &InstanceMap, query: &Embedding) -> Result<QueryResult> {
    if map.is_empty() {
        return Err(Error::Empty("map"));
    }
    if query.dim() != map.embedding_dim {
        return Err(Error::DimensionMismatch { expected: map.embedding_dim, found: query.dim() });
    }
    let mut ranked = map
        .instances
        .iter()
        .map(|inst| Ok(RankedInstance { global_id: inst.global_id, score: cosine(query, &inst.embedding)? }))
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.global_id.cmp(&b.global_id)));
    Ok(QueryResult { best: ranked[0].global_id, ranked })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxRecord {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

/// Map instance without its points and embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplifiedInstance {
    pub id: GlobalId,
    pub name: String,
    pub refined_name: Option<String>,
    pub description: String,
    pub centroid: [f64; 3],
    pub bbox: BoxRecord,
}

fn mm(x: f64) -> f64 {
    let r = (x * 1000.0).round() / 1000.0;
    // avoid "-0.0" in the rendered text
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

fn mm3(p: &nalgebra::Point3<f64>) -> [f64; 3] {
    [mm(p.x), mm(p.y), mm(p.z)]
}

/// One record per instance, coordinates rounded to millimetres.
pub fn build_simplified_map(map: &InstanceMap) -> Vec<SimplifiedInstance> {
    map.instances
        .iter()
        .map(|inst| SimplifiedInstance {
            id: inst.global_id,
            name: inst.name.clone(),
            refined_name: inst.refined_name.clone(),
            description: inst.caption.clone(),
            centroid: mm3(&inst.centroid),
            bbox: BoxRecord { min: mm3(&inst.bbox.min), max: mm3(&inst.bbox.max) },
        })
        .collect()
}

/// Instruction lines of the spatial reasoning prompt, one per line.
pub const PROMPT_INSTRUCTIONS: [&str; 6] = [
    "1. Identify each object by its `name` (or `refined_name` when present) together with its `description`.",
    "2. Refer to objects by their numeric `id` whenever you mention them.",
    "3. Positions are Cartesian world coordinates in meters (x, y, z), with z pointing up.",
    "4. `centroid` is the object's center and `bbox` gives its axis-aligned minimum and maximum corners.",
    "5. Measure distances between objects as Euclidean distances between their centroids.",
    "6. Treat differences below 0.1 m as equal when comparing positions or distances.",
];

/// System prompt: role statement, the six instructions, then the object list
/// as JSON (one object per line).
pub fn build_spatial_prompt(objects: &[SimplifiedInstance]) -> String {
    let mut out = String::from(
        "You answer questions about the layout of a 3D scene. The scene is described by the list of objects below.\n",
    );
    for line in PROMPT_INSTRUCTIONS {
        out.push_str(line);
        out.push('\n');
    }
    out.push_str("\nObjects:\n[");
    for (i, obj) in objects.iter().enumerate() {
        out.push_str(if i == 0 { "\n  " } else { ",\n  " });
        out.push_str(&serde_json::to_string(obj).expect("simplified instance serializes"));
    }
    out.push_str(if objects.is_empty() { "]\n" } else { "\n]\n" });
    out
}

/// Parse the object list back out of a prompt produced by
/// [`build_spatial_prompt`].
pub fn parse_prompt_objects(prompt: &str) -> Result<Vec<SimplifiedInstance>> {
    let start = prompt.find("\nObjects:\n").ok_or_else(|| Error::Format("prompt has no object list".into()))?;
    serde_json::from_str(&prompt[start + "\nObjects:\n".len()..]).map_err(|e| Error::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{FusionConfig, MapInstance, Observation};
    use nalgebra::Point3;
    use proptest::prelude::*;

    fn inst(id: GlobalId, emb: Vec<f64>, at: [f64; 3]) -> MapInstance {
        let points = vec![Point3::from(at), Point3::new(at[0] + 0.1234567, at[1], at[2] - 0.2)];
        let (bbox, centroid) = MapInstance::bounds_and_centroid(&points).unwrap();
        MapInstance {
            global_id: id,
            points,
            name: format!("obj{id}"),
            refined_name: None,
            caption: format!("object number {id}"),
            embedding: Embedding::new(emb),
            bbox,
            centroid,
            observations: vec![Observation { frame_index: 0, local_id: 1, pred_score: 1.0 }],
        }
    }

    fn one_hot(n: usize) -> InstanceMap {
        let instances = (0..n)
            .map(|i| {
                let mut e = vec![0.0; n];
                e[i] = 1.0;
                inst(i as GlobalId + 1, e, [i as f64, 0.0, 0.0])
            })
            .collect();
        InstanceMap { config: FusionConfig::default(), embedding_dim: n, scene_points: 0, instances }
    }

    #[test]
    fn one_hot_query() {
        let map = one_hot(4);
        let r = query(&map, &Embedding::new(vec![0.0, 1.0, 0.0, 0.0])).unwrap();
        assert_eq!(r.best, 2);
        assert_eq!(r.ranked[0], RankedInstance { global_id: 2, score: 1.0 });
        assert!(r.ranked[1..].iter().all(|x| x.score == 0.0));
        assert_eq!(r.ranked.iter().map(|x| x.global_id).collect::<Vec<_>>(), vec![2, 1, 3, 4]);
        assert_eq!(r.top(10).len(), 4);
    }

    #[test]
    fn query_errors() {
        let map = one_hot(2);
        assert!(matches!(query(&map, &Embedding::new(vec![1.0])), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(query(&map, &Embedding::zeros(2)), Err(Error::ZeroVector)));
        let empty = InstanceMap { instances: vec![], ..map };
        assert!(matches!(query(&empty, &Embedding::new(vec![1.0, 0.0])), Err(Error::Empty(_))));
    }

    #[test]
    fn singleton_always_wins() {
        let map = one_hot(1);
        assert_eq!(query(&map, &Embedding::new(vec![-3.0])).unwrap().best, 1);
    }

    #[test]
    fn simplified_map_drops_points_and_embeddings() {
        let map = one_hot(2);
        let s = build_simplified_map(&map);
        assert_eq!(s.iter().map(|r| r.id).collect::<Vec<_>>(), vec![1, 2]);
        let json = serde_json::to_value(&s).unwrap();
        let keys: Vec<&str> = json[0].as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(keys.len(), 6);
        assert!(!keys.contains(&"embedding") && !keys.contains(&"points"));
        assert_eq!(s[0].bbox.max, [0.123, 0.0, 0.0]);
        assert_eq!(s[0].bbox.min, [0.0, 0.0, -0.2]);
        assert!(build_simplified_map(&InstanceMap { instances: vec![], ..map }).is_empty());
    }

    #[test]
    fn prompt_contains_instructions_and_objects() {
        let objs = build_simplified_map(&one_hot(3));
        let p = build_spatial_prompt(&objs);
        for line in PROMPT_INSTRUCTIONS {
            assert!(p.contains(line));
        }
        assert_eq!(parse_prompt_objects(&p).unwrap(), objs);
        let empty = build_spatial_prompt(&[]);
        assert!(PROMPT_INSTRUCTIONS.iter().all(|l| empty.contains(l)));
        assert!(parse_prompt_objects(&empty).unwrap().is_empty());
    }

    #[test]
    fn prompt_size_is_linear_in_instances() {
        let xs: Vec<f64> = (1..=100).map(|n| n as f64).collect();
        let ys: Vec<f64> = (1..=100)
            .map(|n| build_spatial_prompt(&build_simplified_map(&one_hot(n))).len() as f64)
            .collect();
        let n = xs.len() as f64;
        let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
        let r2 = sxy * sxy / (sxx * syy);
        assert!(r2 > 0.99, "R^2 = {r2}");
    }

    proptest! {
        #[test]
        fn ranking_matches_scan_and_is_scale_free(
            embs in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 4), 1..12),
            q in proptest::collection::vec(-1.0f64..1.0, 4),
            alpha in 0.001f64..1000.0,
        ) {
            prop_assume!(q.iter().any(|x| x.abs() > 1e-3));
            prop_assume!(embs.iter().all(|e| e.iter().any(|x| x.abs() > 1e-3)));
            let instances = embs.iter().enumerate().map(|(i, e)| inst(i as GlobalId + 1, e.clone(), [0.0; 3])).collect();
            let map = InstanceMap { config: FusionConfig::default(), embedding_dim: 4, scene_points: 0, instances };
            let before = map.clone();
            let r = query(&map, &Embedding::new(q.clone())).unwrap();
            prop_assert_eq!(&map, &before);
            // scalar scan oracle
            let mut oracle: Vec<(f64, GlobalId)> = embs.iter().enumerate().map(|(i, e)| {
                let mut dot = 0.0; let mut na = 0.0; let mut nb = 0.0;
                for k in 0..4 { dot += q[k] * e[k]; na += q[k] * q[k]; nb += e[k] * e[k]; }
                (dot / (na * nb).sqrt(), i as GlobalId + 1)
            }).collect();
            oracle.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            for (got, want) in r.ranked.iter().zip(&oracle) {
                prop_assert!((got.score - want.0).abs() < 1e-12);
            }
            prop_assert!(r.ranked.windows(2).all(|w| w[0].score >= w[1].score));
            prop_assert_eq!(r.best, r.ranked[0].global_id);
            let scaled = query(&map, &Embedding::new(q.iter().map(|x| x * alpha).collect())).unwrap();
            let ids = |r: &QueryResult| r.ranked.iter().map(|x| x.global_id).collect::<Vec<_>>();
            // exact ties may reorder only if scaling perturbs the last bit
            prop_assert!(scaled.best == r.best || (scaled.ranked[0].score - r.ranked[1].score).abs() < 1e-12);
            if r.ranked.windows(2).all(|w| w[0].score - w[1].score > 1e-9) {
                prop_assert_eq!(ids(&scaled), ids(&r));
            }
        }
    }
}
