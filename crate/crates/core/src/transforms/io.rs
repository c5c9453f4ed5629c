use std::path::Path;

use num_bigint::BigInt;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::numerics::{Mat, Rational, Scalar};
use crate::transforms::{PolyPoints, WinogradTransform};

/// Scalars with a lossless JSON encoding: rationals as `["num", "den"]`
/// string pairs, floats as the 16-digit hex of their IEEE-754 bits.
pub trait JsonScalar: Scalar {
    fn encode(&self) -> Value;
    fn decode(v: &Value) -> Result<Self>;
}

impl JsonScalar for Rational {
    fn encode(&self) -> Value {
        json!([self.numer().to_string(), self.denom().to_string()])
    }

    fn decode(v: &Value) -> Result<Self> {
        let pair = v
            .as_array()
            .filter(|a| a.len() == 2)
            .ok_or_else(|| Error::Format(format!("expected [num, den], found {v}")))?;
        let parse = |x: &Value| -> Result<BigInt> {
            x.as_str()
                .ok_or_else(|| Error::Format(format!("expected integer string, found {x}")))?
                .parse::<BigInt>()
                .map_err(|e| Error::Format(e.to_string()))
        };
        let (num, den) = (parse(&pair[0])?, parse(&pair[1])?);
        if den == BigInt::from(0) {
            return Err(Error::Format("zero denominator".into()));
        }
        Ok(Rational::new(num, den))
    }
}

impl JsonScalar for f64 {
    fn encode(&self) -> Value {
        Value::String(format!("{:016x}", self.to_bits()))
    }

    fn decode(v: &Value) -> Result<Self> {
        let s = v
            .as_str()
            .ok_or_else(|| Error::Format(format!("expected hex float string, found {v}")))?;
        let bits = u64::from_str_radix(s.trim_start_matches("0x"), 16)
            .map_err(|e| Error::Format(format!("bad hex float {s:?}: {e}")))?;
        Ok(f64::from_bits(bits))
    }
}

pub fn mat_to_json<S: JsonScalar>(m: &Mat<S>) -> Value {
    Value::Array(
        (0..m.rows())
            .map(|i| Value::Array(m.row(i).iter().map(JsonScalar::encode).collect()))
            .collect(),
    )
}

pub fn mat_from_json<S: JsonScalar>(v: &Value) -> Result<Mat<S>> {
    let rows = v
        .as_array()
        .ok_or_else(|| Error::Format("matrix must be an array of rows".into()))?;
    let parsed = rows
        .iter()
        .map(|row| {
            row.as_array()
                .ok_or_else(|| Error::Format("matrix row must be an array".into()))?
                .iter()
                .map(S::decode)
                .collect::<Result<Vec<S>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Mat::from_rows(&parsed)
}

fn points_to_json(p: &PolyPoints) -> Value {
    json!({
        "finite": p.finite.iter().map(JsonScalar::encode).collect::<Vec<_>>(),
        "infinity": p.infinity,
    })
}

fn points_from_json(v: &Value) -> Result<PolyPoints> {
    let finite = v["finite"]
        .as_array()
        .ok_or_else(|| Error::Format("points.finite missing".into()))?
        .iter()
        .map(Rational::decode)
        .collect::<Result<Vec<_>>>()?;
    let infinity = v["infinity"]
        .as_bool()
        .ok_or_else(|| Error::Format("points.infinity missing".into()))?;
    PolyPoints::new(finite, infinity)
}

pub fn transform_to_json<S: JsonScalar>(tf: &WinogradTransform<S>) -> Value {
    json!({
        "m": tf.m,
        "r": tf.r,
        "points": points_to_json(&tf.points),
        "learnable": tf.learnable,
        "G": mat_to_json(&tf.g),
        "Bt": mat_to_json(&tf.bt),
        "At": mat_to_json(&tf.at),
    })
}

pub fn transform_from_json<S: JsonScalar>(v: &Value) -> Result<WinogradTransform<S>> {
    let count = |k: &str| -> Result<usize> {
        v[k].as_u64()
            .map(|x| x as usize)
            .ok_or_else(|| Error::Format(format!("field {k:?} missing or not an integer")))
    };
    let tf = WinogradTransform {
        m: count("m")?,
        r: count("r")?,
        g: mat_from_json(&v["G"])?,
        bt: mat_from_json(&v["Bt"])?,
        at: mat_from_json(&v["At"])?,
        points: points_from_json(&v["points"])?,
        learnable: v["learnable"].as_bool().unwrap_or(false),
    };
    tf.validate()?;
    Ok(tf)
}

/// Matrices stored in a transform file: exact rationals or floats.
#[derive(Debug, Clone, PartialEq)]
pub enum TransformFile {
    Exact(WinogradTransform<Rational>),
    Float(WinogradTransform<f64>),
}

impl TransformFile {
    pub fn to_f64(&self) -> WinogradTransform<f64> {
        match self {
            TransformFile::Exact(t) => t.to_f64(),
            TransformFile::Float(t) => t.clone(),
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            TransformFile::Exact(t) => transform_to_json(t),
            TransformFile::Float(t) => transform_to_json(t),
        }
    }

    /// Detects the encoding from the first matrix entry.
    pub fn from_json(v: &Value) -> Result<Self> {
        let exact = v["G"]
            .get(0)
            .and_then(|row| row.get(0))
            .map(Value::is_array)
            .ok_or_else(|| Error::Format("transform file has an empty G".into()))?;
        Ok(if exact {
            TransformFile::Exact(transform_from_json(v)?)
        } else {
            TransformFile::Float(transform_from_json(v)?)
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_json())?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = crate::error::read_text(path)?;
        Self::from_json(&serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transforms::default_transform;
    use proptest::prelude::*;

    #[test]
    fn exact_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f6.json");
        let tf = TransformFile::Exact(default_transform(6, 3).unwrap());
        tf.save(&path).unwrap();
        assert_eq!(TransformFile::load(&path).unwrap(), tf);
    }

    #[test]
    fn rejects_malformed() {
        let mut v = transform_to_json(&default_transform(2, 3).unwrap());
        v["m"] = json!(3);
        assert!(TransformFile::from_json(&v).is_err());
        assert!(Rational::decode(&json!(["1", "0"])).is_err());
        assert!(f64::decode(&json!("zz")).is_err());
    }

    proptest! {
        #[test]
        fn float_transform_roundtrip_is_bit_exact(vals in proptest::collection::vec(proptest::num::f64::ANY, 4 * 3)) {
            let mut tf = default_transform(2, 3).unwrap().to_f64();
            tf.g = Mat::new(4, 3, vals).unwrap();
            tf.learnable = true;
            let back = TransformFile::from_json(&TransformFile::Float(tf.clone()).to_json()).unwrap();
            let TransformFile::Float(b) = back else { panic!("expected float file") };
            let bits = |m: &Mat<f64>| m.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&b.g), bits(&tf.g));
            prop_assert_eq!(bits(&b.bt), bits(&tf.bt));
            prop_assert!(b.learnable);
        }
    }
}
