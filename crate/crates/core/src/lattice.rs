//! Lattice sites, (generalized) elementary regions on `Z^r`, indexing and
//! section geometry.
//!
//! A [`Region`] is stored symbolically: an outer rectangle `[lo, hi]` plus an
//! optional cut. Membership is `O(r)`; explicit site lists are produced only
//! when indexing.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Layer label of a site.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sign {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    pub fn flip(self) -> Sign {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sign::Plus => "+",
            Sign::Minus => "-",
        })
    }
}

/// A point `(k, n, xi)` of `Z^b x Z^d x {+,-}`.
///
/// The derived order is lexicographic on `(k, n, xi)` with `+` before `-`;
/// it fixes the matrix layout everywhere.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Site {
    pub k: Vec<i64>,
    pub n: Vec<i64>,
    pub xi: Sign,
}

impl Site {
    pub fn new(k: Vec<i64>, n: Vec<i64>, xi: Sign) -> Self {
        Site { k, n, xi }
    }

    /// `max(|k|_inf, |n|_inf)`.
    pub fn norm(&self) -> i64 {
        self.k.iter().chain(self.n.iter()).map(|v| v.abs()).max().unwrap_or(0)
    }

    /// The point `(k, n)` in `Z^{b+d}`.
    pub fn point(&self) -> Vec<i64> {
        let mut p = self.k.clone();
        p.extend_from_slice(&self.n);
        p
    }

    pub fn from_point(point: &[i64], b: usize, xi: Sign) -> Self {
        Site {
            k: point[..b].to_vec(),
            n: point[b..].to_vec(),
            xi,
        }
    }

    /// Sup-norm distance of the underlying lattice points (layers ignored).
    pub fn dist(&self, other: &Site) -> i64 {
        sup_dist(&self.point(), &other.point())
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(k={:?}, n={:?}, {})", self.k, self.n, self.xi)
    }
}

pub fn sup_norm(x: &[i64]) -> i64 {
    x.iter().map(|v| v.abs()).max().unwrap_or(0)
}

pub fn sup_dist(x: &[i64], y: &[i64]) -> i64 {
    x.iter().zip(y).map(|(a, b)| (a - b).abs()).max().unwrap_or(0)
}

/// The resonant set `S = {(e_l, n_l, +)} u {(-e_l, n_l, -)}`.
pub fn resonant_sites(anchors: &[Vec<i64>]) -> Vec<Site> {
    let b = anchors.len();
    let mut out = Vec::with_capacity(2 * b);
    for (l, n) in anchors.iter().enumerate() {
        let mut e = vec![0; b];
        e[l] = 1;
        out.push(Site::new(e.clone(), n.clone(), Sign::Plus));
        e[l] = -1;
        out.push(Site::new(e, n.clone(), Sign::Minus));
    }
    out
}

/// Per-coordinate relation of an orthant-style cut.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "<")]
    Less,
    #[serde(rename = ">")]
    Greater,
    #[serde(rename = "none")]
    None,
}

impl Relation {
    fn holds(self, v: i64) -> bool {
        match self {
            Relation::Less => v < 0,
            Relation::Greater => v > 0,
            Relation::None => true,
        }
    }

    fn is_active(self) -> bool {
        self != Relation::None
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Cut {
    None,
    /// `outer \ (outer + z)`.
    Translate(Vec<i64>),
    /// `outer \ {x : (x_i - c_i) rel_i 0 for all i}`.
    Sign { center: Vec<i64>, relations: Vec<Relation> },
}

/// A rectangle `[lo, hi]` (inclusive) with an optional cut.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "RegionRecord", try_from = "RegionRecord")]
pub struct Region {
    lo: Vec<i64>,
    hi: Vec<i64>,
    cut: Cut,
}

impl Region {
    pub fn rectangle(lo: Vec<i64>, hi: Vec<i64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        if lo.iter().zip(&hi).any(|(a, b)| a > b) {
            return Err(Error::InvalidArgument(format!(
                "rectangle corners out of order: {lo:?} > {hi:?}"
            )));
        }
        Ok(Region { lo, hi, cut: Cut::None })
    }

    /// `Lambda_N(x)`.
    pub fn cube(center: &[i64], n: i64) -> Result<Self> {
        if n < 0 {
            return Err(Error::InvalidArgument(format!("cube radius {n} < 0")));
        }
        Region::rectangle(
            center.iter().map(|c| c - n).collect(),
            center.iter().map(|c| c + n).collect(),
        )
    }

    /// `R_w(x) \ (R_w(x) + z)`.
    pub fn generalized(center: &[i64], widths: &[i64], z: &[i64]) -> Result<Self> {
        if widths.len() != center.len() || z.len() != center.len() {
            return Err(Error::DimensionMismatch {
                expected: center.len(),
                got: widths.len().min(z.len()),
            });
        }
        let mut r = Region::rectangle(
            center.iter().zip(widths).map(|(c, w)| c - w).collect(),
            center.iter().zip(widths).map(|(c, w)| c + w).collect(),
        )?;
        r.cut = Cut::Translate(z.to_vec());
        Ok(r)
    }

    pub fn with_sign_cut(mut self, center: Vec<i64>, relations: Vec<Relation>) -> Result<Self> {
        if center.len() != self.dim() || relations.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: relations.len(),
            });
        }
        self.cut = Cut::Sign { center, relations };
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[i64] {
        &self.lo
    }

    pub fn hi(&self) -> &[i64] {
        &self.hi
    }

    pub fn cut(&self) -> &Cut {
        &self.cut
    }

    /// Side lengths `hi - lo` of the outer rectangle.
    pub fn side_lengths(&self) -> Vec<i64> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).collect()
    }

    fn in_outer(&self, x: &[i64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (a, b))| a <= v && v <= b)
    }

    pub fn contains(&self, x: &[i64]) -> bool {
        if x.len() != self.dim() || !self.in_outer(x) {
            return false;
        }
        match &self.cut {
            Cut::None => true,
            Cut::Translate(z) => {
                let shifted: Vec<i64> = x.iter().zip(z).map(|(a, b)| a - b).collect();
                !self.in_outer(&shifted)
            }
            Cut::Sign { center, relations } => !x
                .iter()
                .zip(center)
                .zip(relations)
                .all(|((v, c), rel)| rel.holds(v - c)),
        }
    }

    /// Number of points of the outer rectangle.
    pub fn outer_volume(&self) -> u128 {
        self.side_lengths().iter().map(|s| (*s as u128) + 1).product()
    }

    /// All member points in lexicographic order.
    pub fn points(&self) -> Vec<Vec<i64>> {
        let mut out = Vec::new();
        if self.dim() == 0 {
            out.push(Vec::new());
            return out;
        }
        let mut x = self.lo.clone();
        loop {
            if self.contains(&x) {
                out.push(x.clone());
            }
            let mut i = self.dim();
            loop {
                if i == 0 {
                    return out;
                }
                i -= 1;
                if x[i] < self.hi[i] {
                    x[i] += 1;
                    break;
                }
                x[i] = self.lo[i];
            }
        }
    }

    pub fn len(&self) -> usize {
        self.points().len()
    }

    pub fn is_empty(&self) -> bool {
        self.points().is_empty()
    }

    /// Sup-norm diameter, i.e. the largest coordinate range over members.
    pub fn diameter(&self) -> Option<i64> {
        let pts = self.points();
        if pts.is_empty() {
            return None;
        }
        let mut best = 0;
        for i in 0..self.dim() {
            let lo = pts.iter().map(|p| p[i]).min().unwrap();
            let hi = pts.iter().map(|p| p[i]).max().unwrap();
            best = best.max(hi - lo);
        }
        Some(best)
    }

    pub fn translate(&self, shift: &[i64]) -> Region {
        let add = |v: &[i64]| -> Vec<i64> { v.iter().zip(shift).map(|(a, b)| a + b).collect() };
        let cut = match &self.cut {
            Cut::None => Cut::None,
            Cut::Translate(z) => Cut::Translate(z.clone()),
            Cut::Sign { center, relations } => Cut::Sign {
                center: add(center),
                relations: relations.clone(),
            },
        };
        Region {
            lo: add(&self.lo),
            hi: add(&self.hi),
            cut,
        }
    }

    /// Whether this is a cube `Lambda_N(x)`, possibly with an orthant cut
    /// centered at `x` having at least two active relations.
    pub fn elementary_size(&self) -> Option<i64> {
        let sides = self.side_lengths();
        let s = *sides.first()?;
        if s % 2 != 0 || sides.iter().any(|v| *v != s) {
            return None;
        }
        let n = s / 2;
        let center: Vec<i64> = self.lo.iter().map(|a| a + n).collect();
        match &self.cut {
            Cut::None => Some(n),
            Cut::Sign { center: c, relations } => {
                let active = relations.iter().filter(|r| r.is_active()).count();
                (c == &center && active >= 2).then_some(n)
            }
            Cut::Translate(_) => None,
        }
    }

    fn center_f64(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| (*a as f64 + *b as f64) / 2.0)
            .collect()
    }
}

/// Structured-text record of a region.
///
/// `center` and `widths` describe `R_w(x) = {y : |y_i - x_i| <= w_i}`; half
/// integers occur for rectangles with an odd side length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionRecord {
    pub center: Vec<f64>,
    pub widths: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cut_vector: Option<Vec<i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sign_cuts: Option<Vec<Relation>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sign_center: Option<Vec<i64>>,
}

impl From<Region> for RegionRecord {
    fn from(r: Region) -> Self {
        let center = r.center_f64();
        let widths = r.side_lengths().iter().map(|s| *s as f64 / 2.0).collect();
        let (cut_vector, sign_cuts, sign_center) = match r.cut {
            Cut::None => (None, None, None),
            Cut::Translate(z) => (Some(z), None, None),
            Cut::Sign { center, relations } => (None, Some(relations), Some(center)),
        };
        RegionRecord {
            center,
            widths,
            cut_vector,
            sign_cuts,
            sign_center,
        }
    }
}

impl TryFrom<RegionRecord> for Region {
    type Error = Error;

    fn try_from(rec: RegionRecord) -> Result<Self> {
        let to_int = |v: f64| -> Result<i64> {
            if v.fract() != 0.0 || !v.is_finite() {
                Err(Error::InvalidArgument(format!("non-integral rectangle corner {v}")))
            } else {
                Ok(v as i64)
            }
        };
        if rec.center.len() != rec.widths.len() {
            return Err(Error::DimensionMismatch {
                expected: rec.center.len(),
                got: rec.widths.len(),
            });
        }
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        for (c, w) in rec.center.iter().zip(&rec.widths) {
            lo.push(to_int(c - w)?);
            hi.push(to_int(c + w)?);
        }
        let mut region = Region::rectangle(lo, hi)?;
        match (rec.cut_vector, rec.sign_cuts) {
            (Some(_), Some(_)) => {
                return Err(Error::InvalidArgument(
                    "region has both a translation and a sign cut".into(),
                ))
            }
            (Some(z), None) => {
                if z.len() != region.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: region.dim(),
                        got: z.len(),
                    });
                }
                region.cut = Cut::Translate(z);
            }
            (None, Some(rel)) => {
                let center = match rec.sign_center {
                    Some(c) => c,
                    None => rec
                        .center
                        .iter()
                        .map(|c| to_int(*c))
                        .collect::<Result<Vec<_>>>()?,
                };
                region = region.with_sign_cut(center, rel)?;
            }
            (None, None) => {}
        }
        Ok(region)
    }
}

/// `ER_0(N)` on `Z^r`: the cube plus every distinct orthant cut with at least
/// two active relations.
pub fn enumerate_elementary_regions(r: usize, n: i64) -> Result<Vec<Region>> {
    if n <= 0 {
        return Err(Error::InvalidArgument(format!("region size N = {n} must be >= 1")));
    }
    let origin = vec![0; r];
    let cube = Region::cube(&origin, n)?;
    let mut out = vec![cube.clone()];
    if r < 2 {
        return Ok(out);
    }
    let small = cube.outer_volume() <= 1 << 16;
    let mut seen_sets: HashSet<Vec<bool>> = HashSet::new();
    let mut seen_patterns: HashSet<Vec<Relation>> = HashSet::new();
    if small {
        seen_sets.insert(membership_mask(&cube, &cube));
    }
    let choices = [Relation::None, Relation::Less, Relation::Greater];
    let total = 3usize.pow(r as u32);
    for code in 0..total {
        let mut c = code;
        let rel: Vec<Relation> = (0..r)
            .map(|_| {
                let v = choices[c % 3];
                c /= 3;
                v
            })
            .collect();
        if rel.iter().filter(|x| x.is_active()).count() < 2 {
            continue;
        }
        let region = cube.clone().with_sign_cut(origin.clone(), rel.clone())?;
        let fresh = if small {
            seen_sets.insert(membership_mask(&region, &cube))
        } else {
            // For N >= 1 distinct patterns remove distinct non-empty sets.
            seen_patterns.insert(rel)
        };
        if fresh {
            out.push(region);
        }
    }
    Ok(out)
}

fn membership_mask(region: &Region, outer: &Region) -> Vec<bool> {
    let plain = Region::rectangle(outer.lo.clone(), outer.hi.clone()).unwrap();
    plain.points().iter().map(|p| region.contains(p)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionTag {
    Elementary,
    WideRectangle,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionShape {
    pub tag: SectionTag,
    pub region: Region,
}

/// The section `{n : (k, n) in region}` of an elementary region of `Z^{b+d}`.
pub fn region_section(region: &Region, b: usize, k: &[i64]) -> Result<SectionShape> {
    if k.len() != b {
        return Err(Error::DimensionMismatch { expected: b, got: k.len() });
    }
    if region.dim() < b {
        return Err(Error::DimensionMismatch {
            expected: b,
            got: region.dim(),
        });
    }
    if region.elementary_size().is_none() {
        return Err(Error::InvalidArgument(
            "section classification requires an elementary region".into(),
        ));
    }
    let in_range = k
        .iter()
        .enumerate()
        .all(|(i, v)| region.lo[i] <= *v && *v <= region.hi[i]);
    if !in_range {
        return Err(Error::EmptySection { k: k.to_vec() });
    }
    let lo_n = region.lo[b..].to_vec();
    let hi_n = region.hi[b..].to_vec();
    let full = Region::rectangle(lo_n.clone(), hi_n.clone())?;
    let (center, relations) = match &region.cut {
        Cut::None => {
            return Ok(SectionShape {
                tag: SectionTag::Elementary,
                region: full,
            })
        }
        Cut::Sign { center, relations } => (center, relations),
        Cut::Translate(_) => unreachable!("elementary_size rejects translation cuts"),
    };
    // A k-relation that fails at this k keeps the whole fibre.
    let escaped = (0..b).any(|i| relations[i].is_active() && !relations[i].holds(k[i] - center[i]));
    if escaped {
        return Ok(SectionShape {
            tag: SectionTag::Elementary,
            region: full,
        });
    }
    let n_rel: Vec<Relation> = relations[b..].to_vec();
    let n_center: Vec<i64> = center[b..].to_vec();
    let active: Vec<usize> = (0..n_rel.len()).filter(|&j| n_rel[j].is_active()).collect();
    match active.len() {
        0 => Err(Error::EmptySection { k: k.to_vec() }),
        1 => {
            let j = active[0];
            let (mut lo, mut hi) = (lo_n, hi_n);
            match n_rel[j] {
                Relation::Less => lo[j] = n_center[j],
                Relation::Greater => hi[j] = n_center[j],
                Relation::None => unreachable!(),
            }
            Ok(SectionShape {
                tag: SectionTag::WideRectangle,
                region: Region::rectangle(lo, hi)?,
            })
        }
        _ => Ok(SectionShape {
            tag: SectionTag::Elementary,
            region: full.with_sign_cut(n_center, n_rel)?,
        }),
    }
}

/// Deterministic bijection between the sites of a region and `0..m`.
#[derive(Clone, Debug)]
pub struct Indexing {
    sites: Vec<Site>,
    index: HashMap<Site, usize>,
}

impl Indexing {
    /// Sorts and deduplicates `sites`.
    pub fn from_sites(mut sites: Vec<Site>) -> Result<Self> {
        sites.sort();
        sites.dedup();
        if sites.is_empty() {
            return Err(Error::EmptyRegion);
        }
        let index = sites.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
        Ok(Indexing { sites, index })
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn site(&self, i: usize) -> &Site {
        &self.sites[i]
    }

    pub fn index_of(&self, site: &Site) -> Option<usize> {
        self.index.get(site).copied()
    }

    /// Sup-norm diameter of the underlying points.
    pub fn diameter(&self) -> i64 {
        if self.sites.is_empty() {
            return 0;
        }
        let r = self.sites[0].k.len() + self.sites[0].n.len();
        let pts: Vec<Vec<i64>> = self.sites.iter().map(Site::point).collect();
        (0..r)
            .map(|i| {
                let lo = pts.iter().map(|p| p[i]).min().unwrap();
                let hi = pts.iter().map(|p| p[i]).max().unwrap();
                hi - lo
            })
            .max()
            .unwrap_or(0)
    }
}

/// Index `region x {+,-}` (a region of `Z^{b+d}`) minus `exclude`.
pub fn index_region(region: &Region, b: usize, exclude: Option<&[Site]>) -> Result<Indexing> {
    if region.dim() < b {
        return Err(Error::DimensionMismatch {
            expected: b,
            got: region.dim(),
        });
    }
    let excluded: HashSet<&Site> = exclude.unwrap_or(&[]).iter().collect();
    let mut sites = Vec::new();
    for p in region.points() {
        for xi in [Sign::Plus, Sign::Minus] {
            let s = Site::from_point(&p, b, xi);
            if !excluded.contains(&s) {
                sites.push(s);
            }
        }
    }
    Indexing::from_sites(sites)
}

/// Whether `region` has width at least `l`: every member `x` and every
/// `0 < l' < l` admit some `Lambda' in ER(l')` with
/// `x in Lambda' subset region` and `dist(x, region \ Lambda') >= l'/2`.
///
/// Witnesses are searched greedily, nearest centers first.
pub fn has_width_at_least(region: &Region, l: i64) -> bool {
    let members: BTreeSet<Vec<i64>> = region.points().into_iter().collect();
    members.iter().all(|x| (1..l).all(|lp| width_witness(region, &members, x, lp).is_some()))
}

/// A witness region for [`has_width_at_least`] at a single point and scale.
pub fn width_witness(
    region: &Region,
    members: &BTreeSet<Vec<i64>>,
    x: &[i64],
    lp: i64,
) -> Option<Region> {
    let r = region.dim();
    let shapes = enumerate_elementary_regions(r, lp).ok()?;
    let mut offsets = Region::cube(&vec![0; r], lp).ok()?.points();
    offsets.sort_by_key(|o| sup_norm(o));
    for off in offsets {
        let y: Vec<i64> = x.iter().zip(&off).map(|(a, b)| a + b).collect();
        for shape in &shapes {
            let cand = shape.translate(&y);
            if !cand.contains(x) {
                continue;
            }
            let pts = cand.points();
            if !pts.iter().all(|p| members.contains(p)) {
                continue;
            }
            let half = lp as f64 / 2.0;
            let far = members
                .iter()
                .filter(|p| !cand.contains(p))
                .all(|p| sup_dist(p, x) as f64 >= half);
            if far {
                return Some(cand);
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn site_order_puts_plus_first() {
        let a = Site::new(vec![0], vec![1], Sign::Plus);
        let b = Site::new(vec![0], vec![1], Sign::Minus);
        let c = Site::new(vec![1], vec![-5], Sign::Plus);
        assert!(a < b && b < c);
        assert_eq!(c.norm(), 5);
    }

    #[test]
    fn one_site_region_indexes_to_zero() {
        let r = Region::cube(&[3], 0).unwrap();
        let idx = index_region(&r, 0, None).unwrap();
        assert_eq!(idx.len(), 2);
        assert_eq!(idx.index_of(&Site::new(vec![], vec![3], Sign::Plus)), Some(0));
    }

    #[test]
    fn empty_after_exclusion_is_error() {
        let r = Region::cube(&[1, 0], 0).unwrap();
        let only = vec![Site::new(vec![1], vec![0], Sign::Plus), Site::new(vec![1], vec![0], Sign::Minus)];
        assert!(matches!(index_region(&r, 1, Some(&only)), Err(Error::EmptyRegion)));
    }

    #[test]
    fn record_round_trip_keeps_half_integer_centers() {
        let r = Region::rectangle(vec![0, -2], vec![3, 2]).unwrap();
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("1.5"));
        let back: Region = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn sign_cut_record_round_trip() {
        let r = Region::cube(&[1, 1], 2)
            .unwrap()
            .with_sign_cut(vec![1, 1], vec![Relation::Less, Relation::Greater])
            .unwrap();
        let json = serde_json::to_string(&r).unwrap();
        let back: Region = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn non_positive_size_rejected() {
        assert!(enumerate_elementary_regions(2, 0).is_err());
        assert_eq!(enumerate_elementary_regions(1, 3).unwrap().len(), 1);
    }

    #[test]
    fn generalized_region_membership() {
        let g = Region::generalized(&[0, 0], &[2, 2], &[1, 0]).unwrap();
        // outer \ (outer + (1,0)) keeps only the column x = -2.
        let pts = g.points();
        assert_eq!(pts.len(), 5);
        assert!(pts.iter().all(|p| p[0] == -2));
    }
}
