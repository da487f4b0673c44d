//! Cross-attention layer identities, registries and layer subsets.
//!
//! Layers are written `(RES, 'DIR', IDX)`, e.g. `(16, 'up', 2)`. `RES` is the
//! resolution label of the reference latent U-net (64/32/16/8); the toy model
//! keeps those labels at half the spatial size. The bottleneck layer of the
//! reference topology is labelled `(8, 'down', 0)`.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Down,
    Mid,
    Up,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Down => "down",
            Direction::Mid => "mid",
            Direction::Up => "up",
        }
    }

    fn phase(self) -> u8 {
        match self {
            Direction::Down => 0,
            Direction::Mid => 1,
            Direction::Up => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerId {
    pub res: u32,
    pub dir: Direction,
    pub idx: u32,
}

impl LayerId {
    pub fn new(res: u32, dir: Direction, idx: u32) -> Self {
        LayerId { res, dir, idx }
    }

    /// Coarse layers sit at resolution labels 8 and 16.
    pub fn is_coarse(&self) -> bool {
        self.res <= 16
    }
}

/// U-net traversal order: down path from fine to coarse, bottleneck, then up
/// path from coarse to fine.
impl Ord for LayerId {
    fn cmp(&self, other: &Self) -> Ordering {
        let key = |l: &LayerId| {
            let r = i64::from(l.res);
            let res_key = if l.dir == Direction::Up { r } else { -r };
            (l.dir.phase(), res_key, l.idx)
        };
        key(self).cmp(&key(other))
    }
}

impl PartialOrd for LayerId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for LayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, '{}', {})", self.res, self.dir.as_str(), self.idx)
    }
}

impl FromStr for LayerId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidLayer(s.to_string());
        let inner = s
            .trim()
            .strip_prefix('(')
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(bad)?;
        let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
        let [res, dir, idx] = parts.as_slice() else {
            return Err(bad());
        };
        let res: u32 = res.parse().map_err(|_| bad())?;
        if !res.is_power_of_two() {
            return Err(bad());
        }
        let dir = dir
            .strip_prefix('\'')
            .and_then(|d| d.strip_suffix('\''))
            .or_else(|| dir.strip_prefix('"').and_then(|d| d.strip_suffix('"')))
            .ok_or_else(bad)?;
        let dir = match dir {
            "down" => Direction::Down,
            "mid" => Direction::Mid,
            "up" => Direction::Up,
            _ => return Err(bad()),
        };
        let idx: u32 = idx.parse().map_err(|_| bad())?;
        Ok(LayerId { res, dir, idx })
    }
}

/// Ordered cross-attention layers of one U-net configuration.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerRegistry {
    layers: Vec<LayerId>,
}

pub const REFERENCE_LAYERS: &str = include_str!("../../data/reference_layers.txt");
pub const REFERENCE_SUBSETS: &str = include_str!("../../data/subset_sequence.txt");

impl LayerRegistry {
    /// Builds a registry; layers must be distinct and listed in traversal order.
    pub fn new(layers: Vec<LayerId>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::RegistryMismatch("empty registry".into()));
        }
        if layers.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::RegistryMismatch(
                "layers must be distinct and in U-net traversal order".into(),
            ));
        }
        Ok(LayerRegistry { layers })
    }

    /// The 16-layer layout of the reference U-net.
    pub fn reference() -> Self {
        let layers = REFERENCE_LAYERS
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.parse().expect("reference layer file is valid"))
            .collect();
        LayerRegistry::new(layers).expect("reference layers are ordered")
    }

    pub fn is_reference(&self) -> bool {
        *self == Self::reference()
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layers(&self) -> &[LayerId] {
        &self.layers
    }

    pub fn position(&self, layer: &LayerId) -> Result<usize> {
        self.layers
            .iter()
            .position(|l| l == layer)
            .ok_or_else(|| Error::UnknownLayer(layer.to_string()))
    }

    /// Layers in positions `first..=last`.
    pub fn range(&self, first: usize, last: usize) -> LayerSubset {
        LayerSubset {
            layers: self.layers[first..=last].to_vec(),
        }
    }

    /// Parses a layer selection against this registry.
    ///
    /// Accepted forms: an inclusive range `A-B` or `A - B`, a comma separated
    /// list `A,B,...`, a single layer, or `all` / `none`.
    pub fn parse_selection(&self, s: &str) -> Result<LayerSubset> {
        let bad = || Error::InvalidLayerRange(s.to_string());
        let t = s.trim();
        match t {
            "all" => return Ok(LayerSubset::new(self.layers.clone())),
            "none" | "" => return Ok(LayerSubset::empty()),
            _ => {}
        }
        let names = split_layer_names(t).map_err(|_| bad())?;
        let mut layers = Vec::new();
        for item in names {
            match item {
                Selection::One(name) => {
                    let id: LayerId = name.parse().map_err(|_| bad())?;
                    self.position(&id).map_err(|_| bad())?;
                    layers.push(id);
                }
                Selection::Range(a, b) => {
                    let a: LayerId = a.parse().map_err(|_| bad())?;
                    let b: LayerId = b.parse().map_err(|_| bad())?;
                    let (pa, pb) = (
                        self.position(&a).map_err(|_| bad())?,
                        self.position(&b).map_err(|_| bad())?,
                    );
                    if pa > pb {
                        return Err(bad());
                    }
                    layers.extend_from_slice(&self.layers[pa..=pb]);
                }
            }
        }
        Ok(LayerSubset::new(layers))
    }

    /// Formats a subset as `Empty set`, `Layer X only`, an inclusive range
    /// `A - B` when contiguous, or a comma separated list.
    pub fn describe(&self, subset: &LayerSubset) -> String {
        let mut pos: Vec<usize> = subset
            .layers()
            .iter()
            .filter_map(|l| self.position(l).ok())
            .collect();
        pos.sort_unstable();
        match pos.as_slice() {
            [] => "Empty set".to_string(),
            [p] => format!("Layer {} only", self.layers[*p]),
            [first, .., last] if last - first + 1 == pos.len() => {
                format!("{} - {}", self.layers[*first], self.layers[*last])
            }
            _ => pos
                .iter()
                .map(|p| self.layers[*p].to_string())
                .collect::<Vec<_>>()
                .join(", "),
        }
    }

    /// Growing subsets from the bottleneck outwards, ending with the full set.
    ///
    /// For the reference registry this is the fixed eight-step sequence used by
    /// the attribute sweep; other registries grow one layer at a time,
    /// alternating between the down and up side.
    pub fn subset_sequence(&self) -> Vec<LayerSubset> {
        if self.is_reference() {
            // Inclusive registry positions of subsets 1..=7.
            const RANGES: [(usize, usize); 7] =
                [(6, 6), (5, 6), (5, 7), (4, 7), (4, 8), (4, 9), (0, 15)];
            let mut out = vec![LayerSubset::empty()];
            out.extend(RANGES.iter().map(|&(a, b)| self.range(a, b)));
            return out;
        }
        let n = self.layers.len();
        let mid = self
            .layers
            .iter()
            .rposition(|l| l.dir != Direction::Up)
            .unwrap_or(n / 2);
        let (mut lo, mut hi) = (mid, mid);
        let mut out = vec![LayerSubset::empty(), self.range(mid, mid)];
        let mut grow_down = true;
        while lo > 0 || hi + 1 < n {
            if (grow_down && lo > 0) || hi + 1 >= n {
                lo -= 1;
            } else {
                hi += 1;
            }
            grow_down = !grow_down;
            out.push(self.range(lo, hi));
        }
        out
    }

    /// The reference registry's subset sequence, rejecting other registries.
    pub fn reference_subset_sequence(&self) -> Result<Vec<LayerSubset>> {
        if !self.is_reference() {
            return Err(Error::RegistryMismatch(
                "the canonical subset sequence is defined for the 16-layer reference registry only"
                    .into(),
            ));
        }
        Ok(self.subset_sequence())
    }

    pub fn to_names(&self) -> Vec<String> {
        self.layers.iter().map(ToString::to_string).collect()
    }

    pub fn from_names(names: &[String]) -> Result<Self> {
        let layers = names
            .iter()
            .map(|n| n.parse())
            .collect::<Result<Vec<LayerId>>>()?;
        LayerRegistry::new(layers)
    }
}

enum Selection<'a> {
    One(&'a str),
    Range(&'a str, &'a str),
}

/// Splits `"(a, 'b', c)-(d, 'e', f),(g, 'h', i)"` into parenthesized names and
/// ranges.
fn split_layer_names(s: &str) -> std::result::Result<Vec<Selection<'_>>, ()> {
    let mut names = Vec::new();
    let bytes = s.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'(' => {
                let end = s[i..].find(')').ok_or(())? + i;
                names.push((i, end + 1));
                i = end + 1;
            }
            b' ' | b',' | b'-' | b'\t' => i += 1,
            _ => return Err(()),
        }
    }
    let (Some(&(first, _)), Some(&(_, last))) = (names.first(), names.last()) else {
        return Err(());
    };
    if !s[..first].trim().is_empty() || !s[last..].trim().is_empty() {
        return Err(());
    }
    // Every gap is "-" inside a range or "," between items.
    let gap = |k: usize| s[names[k].1..names[k + 1].0].trim();
    let mut out = Vec::new();
    let mut k = 0;
    while k < names.len() {
        let (a0, a1) = names[k];
        let next = if k + 1 < names.len() && gap(k) == "-" {
            let (b0, b1) = names[k + 1];
            out.push(Selection::Range(&s[a0..a1], &s[b0..b1]));
            k + 2
        } else {
            out.push(Selection::One(&s[a0..a1]));
            k + 1
        };
        if next < names.len() && gap(next - 1) != "," {
            return Err(());
        }
        k = next;
    }
    Ok(out)
}

/// A set of layers, kept in traversal order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSubset {
    layers: Vec<LayerId>,
}

impl LayerSubset {
    pub fn new(mut layers: Vec<LayerId>) -> Self {
        layers.sort();
        layers.dedup();
        LayerSubset { layers }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn layers(&self) -> &[LayerId] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn contains(&self, l: &LayerId) -> bool {
        self.layers.binary_search(l).is_ok()
    }

    pub fn is_subset_of(&self, other: &LayerSubset) -> bool {
        self.layers.iter().all(|l| other.contains(l))
    }

    /// Membership flag per registry position.
    pub fn mask(&self, registry: &LayerRegistry) -> Vec<bool> {
        registry.layers().iter().map(|l| self.contains(l)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_has_sixteen_layers_in_order() {
        let r = LayerRegistry::reference();
        assert_eq!(r.len(), 16);
        assert_eq!(r.layers()[6], LayerId::new(8, Direction::Down, 0));
        let mut sorted = r.layers().to_vec();
        sorted.sort();
        assert_eq!(sorted, r.layers());
    }

    #[test]
    fn parse_rejects_garbage() {
        for s in ["", "(8, 'down')", "(7, 'down', 0)", "(8, 'sideways', 0)", "8, 'down', 0", "(8, down, 0)"] {
            assert!(s.parse::<LayerId>().is_err(), "{s}");
        }
        assert_eq!(
            "(8,'down',0)".parse::<LayerId>().unwrap(),
            LayerId::new(8, Direction::Down, 0)
        );
    }

    #[test]
    fn selections() {
        let r = LayerRegistry::reference();
        let s = r.parse_selection("(16,'down',1)-(16,'up',0)").unwrap();
        assert_eq!(s.len(), 3);
        let s = r.parse_selection("(8,'down',0),(16,'up',0)").unwrap();
        assert_eq!(s.len(), 2);
        assert!(r.parse_selection("(16,'up',0)-(16,'down',1)").is_err());
        assert!(r.parse_selection("(128,'up',0)").is_err());
        assert!(r.parse_selection("(8,'down',0) (16,'up',0)").is_err());
        assert_eq!(r.parse_selection("all").unwrap().len(), 16);
    }

    #[test]
    fn non_reference_sequence_grows_to_full() {
        let r = LayerRegistry::new(vec![
            LayerId::new(64, Direction::Down, 0),
            LayerId::new(32, Direction::Down, 0),
            LayerId::new(16, Direction::Down, 0),
            LayerId::new(32, Direction::Up, 0),
            LayerId::new(64, Direction::Up, 0),
        ])
        .unwrap();
        let seq = r.subset_sequence();
        assert_eq!(seq.len(), 6);
        assert!(seq[0].is_empty());
        assert_eq!(seq[1].layers(), &[LayerId::new(16, Direction::Down, 0)]);
        assert_eq!(seq.last().unwrap().len(), 5);
        for w in seq.windows(2) {
            assert!(w[0].is_subset_of(&w[1]));
            assert_eq!(w[0].len() + 1, w[1].len());
        }
        assert!(r.reference_subset_sequence().is_err());
    }
}
