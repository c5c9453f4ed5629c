use crate::error::{Error, Result};
use crate::numerics::{rat, Rational};

/// Interpolation points for a Cook-Toom construction: finite points plus an
/// optional point at infinity.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyPoints {
    pub finite: Vec<Rational>,
    pub infinity: bool,
}

impl PolyPoints {
    pub fn new(finite: Vec<Rational>, infinity: bool) -> Result<Self> {
        for (i, a) in finite.iter().enumerate() {
            if finite[..i].contains(a) {
                return Err(Error::Construction(format!("duplicate polynomial point {a}")));
            }
        }
        Ok(Self { finite, infinity })
    }

    /// Total number of points, counting infinity.
    pub fn count(&self) -> usize {
        self.finite.len() + usize::from(self.infinity)
    }

    /// Parses a comma separated list such as `0,1,-1,1/2,inf`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut finite = Vec::new();
        let mut infinity = false;
        for tok in text.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            if tok.eq_ignore_ascii_case("inf") || tok == "∞" {
                infinity = true;
                continue;
            }
            let r = tok
                .parse::<Rational>()
                .map_err(|e| Error::Config(format!("bad polynomial point {tok:?}: {e}")))?;
            finite.push(r);
        }
        Self::new(finite, infinity)
    }
}

impl std::fmt::Display for PolyPoints {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut parts: Vec<String> = self.finite.iter().map(ToString::to_string).collect();
        if self.infinity {
            parts.push("inf".into());
        }
        write!(f, "{}", parts.join(","))
    }
}

/// Configurations with shipped default points.
pub const SUPPORTED: [(usize, usize); 6] = [(2, 3), (4, 3), (6, 3), (2, 5), (4, 5), (6, 5)];

/// Shipped point sets: the small-magnitude sequence 0, ±1, ±2, ±1/2, ±3
/// truncated to `m + r - 2` finite points, plus infinity.
pub fn default_points(m: usize, r: usize) -> Result<PolyPoints> {
    if !SUPPORTED.contains(&(m, r)) {
        return Err(Error::Config(format!(
            "no default polynomial points for F({m}x{m}, {r}x{r}); pass points explicitly"
        )));
    }
    Ok(leading_points(m + r - 2))
}

/// The first `count` points of 0, 1, -1, 2, -2, 1/2, -1/2, 3, -3, 1/3, -1/3, ...
/// plus infinity. Used for defaults and for sizes outside the shipped set.
pub fn leading_points(count: usize) -> PolyPoints {
    let mut seq = vec![rat(0, 1)];
    let mut k = 1i64;
    while seq.len() < count {
        seq.push(rat(k, 1));
        seq.push(rat(-k, 1));
        if k > 1 {
            seq.push(rat(1, k));
            seq.push(rat(-1, k));
        }
        k += 1;
    }
    seq.truncate(count);
    PolyPoints {
        finite: seq,
        infinity: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_sets() {
        assert_eq!(default_points(2, 3).unwrap().to_string(), "0,1,-1,inf");
        assert_eq!(default_points(4, 3).unwrap().to_string(), "0,1,-1,2,-2,inf");
        assert_eq!(
            default_points(6, 3).unwrap().to_string(),
            "0,1,-1,2,-2,1/2,-1/2,inf"
        );
        assert_eq!(default_points(6, 5).unwrap().count(), 10);
        assert!(matches!(default_points(3, 3), Err(Error::Config(_))));
    }

    #[test]
    fn parse_and_duplicates() {
        let p = PolyPoints::parse("0, 1, -1, 1/2, inf").unwrap();
        assert_eq!(p.count(), 5);
        assert!(p.infinity);
        assert!(matches!(PolyPoints::parse("0,1,1"), Err(Error::Construction(_))));
        assert!(PolyPoints::parse("0,x").is_err());
    }
}
