//! Serde helpers for reals that may be `+inf` (JSON has no infinity literal).

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Repr {
    Num(f64),
    Text(String),
}

pub mod extended_f64 {
    use super::*;

    pub fn serialize<S: Serializer>(value: &f64, s: S) -> Result<S::Ok, S::Error> {
        if value.is_infinite() {
            let text = if *value > 0.0 { "inf" } else { "-inf" };
            text.serialize(s)
        } else {
            value.serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) => match t.as_str() {
                "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
                "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
                other => Err(serde::de::Error::custom(format!(
                    "expected a number or \"inf\", got \"{other}\""
                ))),
            },
        }
    }
}

pub mod extended_f64_opt {
    use super::*;

    pub fn serialize<S: Serializer>(value: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match value {
            Some(v) => super::extended_f64::serialize(v, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        let repr = Option::<Repr>::deserialize(d)?;
        match repr {
            None => Ok(None),
            Some(Repr::Num(x)) => Ok(Some(x)),
            Some(Repr::Text(t)) => match t.as_str() {
                "inf" | "+inf" | "infinity" => Ok(Some(f64::INFINITY)),
                other => Err(serde::de::Error::custom(format!(
                    "expected a number or \"inf\", got \"{other}\""
                ))),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use serde::{Deserialize, Serialize};

    #[derive(Serialize, Deserialize, PartialEq, Debug)]
    struct Holder {
        #[serde(with = "super::extended_f64")]
        x: f64,
    }

    #[test]
    fn infinity_survives_json() {
        let h = Holder { x: f64::INFINITY };
        let text = serde_json::to_string(&h).unwrap();
        assert_eq!(text, r#"{"x":"inf"}"#);
        assert_eq!(serde_json::from_str::<Holder>(&text).unwrap(), h);
        let finite: Holder = serde_json::from_str(r#"{"x":0.125}"#).unwrap();
        assert_eq!(finite.x, 0.125);
    }
}
