//! Split/merge edit distance between a reconstruction and ground truth.
//!
//! Within each slice, a ground-truth segment without any matched result
//! segment is a missed segment (one merge error), and every result segment
//! that is unmatched or duplicates another match of the same ground-truth
//! segment is a falsely introduced segment (one split error). Between slices,
//! every ground-truth link not reproduced by the result is a missed assignment
//! (split error) and every result link without a ground-truth counterpart is a
//! false assignment (merge error).
//!
//! A result segment is matched to the ground-truth id covering strictly more
//! than half of its pixels; ties and background majorities leave it unmatched.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment_model::AssignmentKind;
use crate::component_forest::HypothesisId;
use crate::error::{Error, Result};
use crate::image_model::{read_labels, write_labels, Dims, LabelMap};

/// A labeled segment: all pixels of one id in one slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SegmentRef {
    pub slice: usize,
    pub label: u32,
}

/// Identity link between a segment of slice z and one of slice z + 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SegmentLink {
    pub from: SegmentRef,
    pub to: SegmentRef,
}

/// Endpoint of an accepted assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Endpoint {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hypothesis: Option<HypothesisId>,
    pub slice: usize,
    pub label: u32,
}

impl Endpoint {
    pub fn segment(&self) -> SegmentRef {
        SegmentRef {
            slice: self.slice,
            label: self.label,
        }
    }
}

/// An accepted assignment. Empty `sources` / `targets` stand for the end node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptedLink {
    pub kind: AssignmentKind,
    pub sources: Vec<Endpoint>,
    pub targets: Vec<Endpoint>,
    pub cost: f64,
}

/// The assignment graph as stored in `links.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkGraph {
    pub objective: f64,
    pub links: Vec<AcceptedLink>,
}

/// A segmented and linked stack.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    /// Selected hypotheses per slice; empty when loaded from disk.
    pub selected: Vec<Vec<HypothesisId>>,
    pub links: Vec<AcceptedLink>,
    pub labels: Vec<LabelMap>,
    pub objective: f64,
}

impl Reconstruction {
    /// Inter-slice segment pairs of all accepted continuations, splits and
    /// merges; a split or merge contributes one pair per child. Duplicates are
    /// kept so that repeated false links are counted individually.
    pub fn segment_links(&self) -> Vec<SegmentLink> {
        let mut out = Vec::new();
        for link in &self.links {
            for s in &link.sources {
                for t in &link.targets {
                    out.push(SegmentLink {
                        from: s.segment(),
                        to: t.segment(),
                    });
                }
            }
        }
        out
    }

    pub fn link_graph(&self) -> LinkGraph {
        LinkGraph {
            objective: self.objective,
            links: self.links.clone(),
        }
    }

    /// Reads `labels/` and `links.json` from a run output directory.
    pub fn load(dir: &Path) -> Result<Self> {
        let labels = read_labels(&dir.join("labels"))?;
        let graph: LinkGraph = read_json(&dir.join("links.json"))?;
        Ok(Self {
            selected: Vec::new(),
            links: graph.links,
            labels,
            objective: graph.objective,
        })
    }
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn segments_of(map: &LabelMap) -> BTreeSet<u32> {
    map.ids.iter().copied().filter(|&id| id != 0).collect()
}

fn check_maps(labels: &[LabelMap], what: &str) -> Result<Dims> {
    let first = labels
        .first()
        .ok_or_else(|| Error::Data(format!("{what} has no slices")))?;
    for (z, m) in labels.iter().enumerate() {
        if m.dims != first.dims || m.ids.len() != first.dims.len() {
            return Err(Error::Dimension(format!(
                "{what}: slice {z} differs in size from slice 0"
            )));
        }
    }
    Ok(first.dims)
}

/// Per-slice label maps and the identity links between them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    pub labels: Vec<LabelMap>,
    pub links: BTreeSet<SegmentLink>,
}

impl GroundTruth {
    /// Links every id to the same id in the next slice, plus `extra` links
    /// (used to annotate branching, where ids change).
    pub fn from_labels(
        labels: Vec<LabelMap>,
        extra: impl IntoIterator<Item = SegmentLink>,
    ) -> Result<Self> {
        check_maps(&labels, "ground truth")?;
        let segments: Vec<BTreeSet<u32>> = labels.iter().map(segments_of).collect();
        let mut links = BTreeSet::new();
        for z in 1..labels.len() {
            for &id in segments[z - 1].intersection(&segments[z]) {
                links.insert(SegmentLink {
                    from: SegmentRef {
                        slice: z - 1,
                        label: id,
                    },
                    to: SegmentRef {
                        slice: z,
                        label: id,
                    },
                });
            }
        }
        for link in extra {
            Self::check_link(&segments, &link)?;
            links.insert(link);
        }
        Ok(Self { labels, links })
    }

    /// Uses a reconstruction as ground truth: exactly its labels and links.
    pub fn from_reconstruction(rec: &Reconstruction) -> Result<Self> {
        check_maps(&rec.labels, "reconstruction")?;
        let segments: Vec<BTreeSet<u32>> = rec.labels.iter().map(segments_of).collect();
        let mut links = BTreeSet::new();
        for link in rec.segment_links() {
            Self::check_link(&segments, &link)?;
            links.insert(link);
        }
        Ok(Self {
            labels: rec.labels.clone(),
            links,
        })
    }

    fn check_link(segments: &[BTreeSet<u32>], link: &SegmentLink) -> Result<()> {
        let exists = |s: SegmentRef| {
            segments
                .get(s.slice)
                .is_some_and(|set| set.contains(&s.label))
        };
        if link.to.slice != link.from.slice + 1 || !exists(link.from) || !exists(link.to) {
            return Err(Error::Data(format!(
                "link {}:{} -> {}:{} does not join existing segments of adjacent slices",
                link.from.slice, link.from.label, link.to.slice, link.to.label
            )));
        }
        Ok(())
    }

    pub fn dims(&self) -> Dims {
        self.labels[0].dims
    }

    pub fn depth(&self) -> usize {
        self.labels.len()
    }

    /// Number of neurons: connected components of the segment/link graph.
    pub fn neuron_count(&self) -> usize {
        let mut index = BTreeMap::new();
        for (z, m) in self.labels.iter().enumerate() {
            for id in segments_of(m) {
                let next = index.len();
                index.insert(
                    SegmentRef {
                        slice: z,
                        label: id,
                    },
                    next,
                );
            }
        }
        let mut parent: Vec<usize> = (0..index.len()).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        let mut count = index.len();
        for link in &self.links {
            let a = find(&mut parent, index[&link.from]);
            let b = find(&mut parent, index[&link.to]);
            if a != b {
                parent[a] = b;
                count -= 1;
            }
        }
        count
    }

    /// Reads label images from `dir` and, if present, extra links from
    /// `dir/links.json` (a JSON array of [`SegmentLink`]).
    pub fn load(dir: &Path) -> Result<Self> {
        let labels = read_labels(dir)?;
        let links_path = dir.join("links.json");
        let extra: Vec<SegmentLink> = if links_path.exists() {
            read_json(&links_path)?
        } else {
            Vec::new()
        };
        Self::from_labels(labels, extra)
    }

    /// Writes label images and the links that id equality does not imply.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_labels(&self.labels, dir)?;
        let extra: Vec<&SegmentLink> = self
            .links
            .iter()
            .filter(|l| l.from.label != l.to.label)
            .collect();
        let text = serde_json::to_string_pretty(&extra).expect("links serialize");
        let path = dir.join("links.json");
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditDistanceReport {
    pub intra_merge: usize,
    pub intra_split: usize,
    pub inter_split: usize,
    pub inter_merge: usize,
    pub total: usize,
    pub neuron_count: usize,
    /// `total / neuron_count`, or `total` itself when there are no neurons.
    pub normalized: f64,
}

impl EditDistanceReport {
    fn new(counts: [usize; 4], neuron_count: usize) -> Self {
        let total = counts.iter().sum();
        Self {
            intra_merge: counts[0],
            intra_split: counts[1],
            inter_split: counts[2],
            inter_merge: counts[3],
            total,
            neuron_count,
            normalized: total as f64 / neuron_count.max(1) as f64,
        }
    }

    pub fn is_consistent(&self) -> bool {
        self.total == self.intra_merge + self.intra_split + self.inter_split + self.inter_merge
    }
}

/// Result id -> ground-truth id for every result segment whose pixels lie on
/// one nonzero ground-truth id for strictly more than half of its area.
pub fn match_components(result: &LabelMap, gt: &LabelMap) -> Result<BTreeMap<u32, u32>> {
    if result.dims != gt.dims || result.ids.len() != gt.ids.len() {
        return Err(Error::Dimension(format!(
            "result is {}x{}, ground truth {}x{}",
            result.dims.width, result.dims.height, gt.dims.width, gt.dims.height
        )));
    }
    let mut area: BTreeMap<u32, usize> = BTreeMap::new();
    let mut overlap: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    for (&r, &g) in result.ids.iter().zip(&gt.ids) {
        if r == 0 {
            continue;
        }
        *area.entry(r).or_default() += 1;
        if g != 0 {
            *overlap.entry((r, g)).or_default() += 1;
        }
    }
    Ok(overlap
        .into_iter()
        .filter(|&((r, _), n)| 2 * n > area[&r])
        .map(|((r, g), _)| (r, g))
        .collect())
}

pub fn edit_distance(result: &Reconstruction, gt: &GroundTruth) -> Result<EditDistanceReport> {
    let dims = check_maps(&result.labels, "reconstruction")?;
    if result.labels.len() != gt.depth() || dims != gt.dims() {
        return Err(Error::Dimension(format!(
            "reconstruction has {} slices of {}x{}, ground truth {} slices of {}x{}",
            result.labels.len(),
            dims.width,
            dims.height,
            gt.depth(),
            gt.dims().width,
            gt.dims().height
        )));
    }

    let per_slice: Vec<(BTreeMap<u32, u32>, usize, usize)> = result
        .labels
        .par_iter()
        .zip(gt.labels.par_iter())
        .map(|(r, g)| {
            let matching = match_components(r, g)?;
            let mut hits: BTreeMap<u32, usize> = BTreeMap::new();
            for &gid in matching.values() {
                *hits.entry(gid).or_default() += 1;
            }
            let missed = segments_of(g)
                .iter()
                .filter(|id| !hits.contains_key(id))
                .count();
            let unmatched = segments_of(r).len() - matching.len();
            let duplicates: usize = hits.values().map(|&n| n - 1).sum();
            Ok((matching, missed, unmatched + duplicates))
        })
        .collect::<Result<_>>()?;

    let intra_merge = per_slice.iter().map(|s| s.1).sum();
    let intra_split = per_slice.iter().map(|s| s.2).sum();

    let mapped = |s: SegmentRef| {
        per_slice
            .get(s.slice)
            .and_then(|m| m.0.get(&s.label))
            .map(|&g| SegmentRef {
                slice: s.slice,
                label: g,
            })
    };
    let mut reproduced = BTreeSet::new();
    let mut inter_merge = 0;
    for link in result.segment_links() {
        let image = match (mapped(link.from), mapped(link.to)) {
            (Some(from), Some(to)) => Some(SegmentLink { from, to }),
            _ => None,
        };
        match image {
            Some(l) if gt.links.contains(&l) => {
                reproduced.insert(l);
            }
            _ => inter_merge += 1,
        }
    }
    let inter_split = gt.links.len() - reproduced.len();

    Ok(EditDistanceReport::new(
        [intra_merge, intra_split, inter_split, inter_merge],
        gt.neuron_count(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(dims: Dims, ids: &[u32]) -> LabelMap {
        LabelMap {
            dims,
            ids: ids.to_vec(),
        }
    }

    fn end(slice: usize, label: u32) -> Endpoint {
        Endpoint {
            hypothesis: None,
            slice,
            label,
        }
    }

    fn continuation(z: usize, a: u32, b: u32) -> AcceptedLink {
        AcceptedLink {
            kind: AssignmentKind::Continuation,
            sources: vec![end(z, a)],
            targets: vec![end(z + 1, b)],
            cost: 0.0,
        }
    }

    #[test]
    fn identical_maps_match_bijectively() {
        let dims = Dims::new(4, 1);
        let m = map(dims, &[1, 1, 2, 0]);
        let matching = match_components(&m, &m).unwrap();
        assert_eq!(matching, BTreeMap::from([(1, 1), (2, 2)]));
    }

    #[test]
    fn majority_rule() {
        let dims = Dims::new(10, 1);
        // 6 of 10 pixels over gt id 3
        let r = map(dims, &[5; 10]);
        let g = map(dims, &[3, 3, 3, 3, 3, 3, 4, 4, 0, 0]);
        assert_eq!(match_components(&r, &g).unwrap(), BTreeMap::from([(5, 3)]));
        // exact 50/50 split stays unmatched
        let g = map(dims, &[3, 3, 3, 3, 3, 4, 4, 4, 4, 4]);
        assert!(match_components(&r, &g).unwrap().is_empty());
        // background majority stays unmatched
        let g = map(dims, &[3, 3, 0, 0, 0, 0, 0, 0, 0, 0]);
        assert!(match_components(&r, &g).unwrap().is_empty());
        assert!(match_components(&r, &map(Dims::new(5, 2), &[0; 10])).is_err());
    }

    #[test]
    fn missing_link_is_one_inter_split() {
        let dims = Dims::new(2, 1);
        let labels = vec![map(dims, &[1, 0]), map(dims, &[1, 0])];
        let gt = GroundTruth::from_labels(labels.clone(), []).unwrap();
        let rec = Reconstruction {
            selected: vec![],
            links: vec![],
            labels,
            objective: 0.0,
        };
        let r = edit_distance(&rec, &gt).unwrap();
        assert_eq!(
            (r.intra_merge, r.intra_split, r.inter_split, r.inter_merge),
            (0, 0, 1, 0)
        );
        assert_eq!(r.total, 1);
        assert_eq!(r.neuron_count, 1);
        assert!(r.is_consistent());
    }

    #[test]
    fn identical_reconstruction_scores_zero() {
        let dims = Dims::new(3, 1);
        let labels = vec![
            map(dims, &[1, 0, 2]),
            map(dims, &[1, 0, 3]),
            map(dims, &[4, 4, 4]),
        ];
        let rec = Reconstruction {
            selected: vec![],
            links: vec![
                continuation(0, 1, 1),
                continuation(0, 2, 3),
                AcceptedLink {
                    kind: AssignmentKind::Merge,
                    sources: vec![end(1, 1), end(1, 3)],
                    targets: vec![end(2, 4)],
                    cost: 0.0,
                },
            ],
            labels,
            objective: 0.0,
        };
        let gt = GroundTruth::from_reconstruction(&rec).unwrap();
        assert_eq!(gt.neuron_count(), 1);
        let r = edit_distance(&rec, &gt).unwrap();
        assert_eq!(r.total, 0);
        assert_eq!(r.normalized, 0.0);
    }

    #[test]
    fn false_and_duplicate_segments() {
        let dims = Dims::new(6, 1);
        let gt = GroundTruth::from_labels(vec![map(dims, &[1, 1, 1, 1, 2, 2])], []).unwrap();
        // gt 1 found twice, gt 2 missed, one spurious segment on background-free area
        let rec = Reconstruction {
            selected: vec![],
            links: vec![],
            labels: vec![map(dims, &[7, 7, 8, 8, 0, 0])],
            objective: 0.0,
        };
        let r = edit_distance(&rec, &gt).unwrap();
        assert_eq!((r.intra_merge, r.intra_split), (1, 1));
        assert_eq!(r.normalized, 1.0);
    }

    #[test]
    fn repeated_false_links_count_individually() {
        let dims = Dims::new(3, 1);
        let gt_labels = vec![map(dims, &[1, 0, 2]), map(dims, &[1, 0, 2])];
        let gt = GroundTruth::from_labels(gt_labels.clone(), []).unwrap();
        let rec = Reconstruction {
            selected: vec![],
            links: vec![
                continuation(0, 1, 1),
                continuation(0, 2, 2),
                continuation(0, 1, 2),
                AcceptedLink {
                    kind: AssignmentKind::Split,
                    sources: vec![end(0, 1)],
                    targets: vec![end(1, 1), end(1, 2)],
                    cost: 0.0,
                },
            ],
            labels: gt_labels,
            objective: 0.0,
        };
        let r = edit_distance(&rec, &gt).unwrap();
        // (1 -> 2) appears twice and is false both times
        assert_eq!((r.inter_split, r.inter_merge), (0, 2));
    }

    #[test]
    fn extra_links_must_join_existing_segments() {
        let dims = Dims::new(2, 1);
        let labels = vec![map(dims, &[1, 0]), map(dims, &[2, 3])];
        let ok = SegmentLink {
            from: SegmentRef { slice: 0, label: 1 },
            to: SegmentRef { slice: 1, label: 3 },
        };
        let gt = GroundTruth::from_labels(labels.clone(), [ok]).unwrap();
        assert_eq!(gt.links.len(), 1);
        assert_eq!(gt.neuron_count(), 2);
        let bad = SegmentLink {
            from: SegmentRef { slice: 0, label: 1 },
            to: SegmentRef { slice: 1, label: 9 },
        };
        assert!(GroundTruth::from_labels(labels, [bad]).is_err());
    }

    #[test]
    fn ground_truth_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let dims = Dims::new(2, 2);
        let labels = vec![map(dims, &[1, 0, 0, 0]), map(dims, &[2, 0, 0, 3])];
        let link = SegmentLink {
            from: SegmentRef { slice: 0, label: 1 },
            to: SegmentRef { slice: 1, label: 2 },
        };
        let gt = GroundTruth::from_labels(labels, [link]).unwrap();
        gt.write(dir.path()).unwrap();
        assert_eq!(GroundTruth::load(dir.path()).unwrap(), gt);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let gt = GroundTruth::from_labels(vec![map(Dims::new(2, 1), &[1, 0])], []).unwrap();
        let rec = Reconstruction {
            selected: vec![],
            links: vec![],
            labels: vec![map(Dims::new(1, 2), &[1, 0])],
            objective: 0.0,
        };
        assert!(edit_distance(&rec, &gt).is_err());
    }
}
