//! Problem files: JSON with `system`, `chi_i`, `chi_f`, `T` and an optional
//! `solver` block. Angles are radians; `"free"` marks a free terminal
//! component.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
#[error("spec field `{field}`: {message}")]
pub struct SpecError {
    pub field: String,
    pub message: String,
}

fn bad(field: &str, message: impl Into<String>) -> SpecError {
    SpecError {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum System {
    Vdp,
    Dubins2d,
    Dubins3d,
}

impl System {
    pub fn state_dim(self) -> usize {
        match self {
            System::Vdp => 2,
            System::Dubins2d => 3,
            System::Dubins3d => 6,
        }
    }

    pub fn default_initial(self) -> Vec<f64> {
        match self {
            System::Vdp => vec![2.0, 2.0],
            System::Dubins2d => vec![0.0; 3],
            System::Dubins3d => vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Cs,
    H,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolverSpec {
    pub starts: usize,
    pub seed: u64,
    pub residual_tol: f64,
    pub families: Vec<Family>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_seed: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub freed_seed: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tangent_seed: Option<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProblemSpec {
    pub system: System,
    pub chi_i: Vec<f64>,
    /// `None` marks a free component.
    pub chi_f: Vec<Option<f64>>,
    pub t_final: f64,
    pub solver: SolverSpec,
}

fn number(v: &Value, field: &str) -> Result<f64, SpecError> {
    let x = v.as_f64().ok_or_else(|| bad(field, format!("expected a number, got {v}")))?;
    if !x.is_finite() {
        return Err(bad(field, "must be finite"));
    }
    Ok(x)
}

fn numbers(v: &Value, field: &str) -> Result<Vec<f64>, SpecError> {
    v.as_array()
        .ok_or_else(|| bad(field, format!("expected an array, got {v}")))?
        .iter()
        .enumerate()
        .map(|(i, x)| number(x, &format!("{field}[{i}]")))
        .collect()
}

fn unit3(v: &[f64], field: &str) -> Result<[f64; 3], SpecError> {
    if v.len() != 3 {
        return Err(bad(field, "expected 3 components"));
    }
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if n < 1e-12 {
        return Err(bad(field, "direction must be nonzero"));
    }
    Ok([v[0] / n, v[1] / n, v[2] / n])
}

impl ProblemSpec {
    pub fn from_json(text: &str) -> Result<Self, SpecError> {
        let root: Value = serde_json::from_str(text).map_err(|e| bad("<document>", e.to_string()))?;
        let obj = root.as_object().ok_or_else(|| bad("<document>", "expected a JSON object"))?;
        Self::from_object(obj)
    }

    fn from_object(obj: &Map<String, Value>) -> Result<Self, SpecError> {
        for key in obj.keys() {
            if !["system", "chi_i", "chi_f", "T", "solver"].contains(&key.as_str()) {
                return Err(bad(key, "unknown field"));
            }
        }
        let system = match obj.get("system").map(|v| v.as_str()) {
            None => return Err(bad("system", "missing")),
            Some(Some("vdp")) => System::Vdp,
            Some(Some("dubins2d")) => System::Dubins2d,
            Some(Some("dubins3d")) => System::Dubins3d,
            Some(_) => return Err(bad("system", "expected one of \"vdp\", \"dubins2d\", \"dubins3d\"")),
        };
        let n = system.state_dim();

        let t_final = number(obj.get("T").ok_or_else(|| bad("T", "missing"))?, "T")?;
        if t_final <= 0.0 {
            return Err(bad("T", format!("must be positive, got {t_final}")));
        }

        let chi_i = match obj.get("chi_i") {
            None => return Err(bad("chi_i", "missing (use \"default\" for the standard initial state)")),
            Some(Value::String(s)) if s == "default" => system.default_initial(),
            Some(v) => numbers(v, "chi_i")?,
        };
        if chi_i.len() != n {
            return Err(bad("chi_i", format!("expected {n} components, got {}", chi_i.len())));
        }
        if system == System::Dubins3d {
            unit3(&chi_i[3..], "chi_i")?;
        }

        let chi_f = obj
            .get("chi_f")
            .ok_or_else(|| bad("chi_f", "missing"))?
            .as_array()
            .ok_or_else(|| bad("chi_f", "expected an array"))?
            .iter()
            .enumerate()
            .map(|(i, v)| match v {
                Value::String(s) if s == "free" => Ok(None),
                _ => number(v, &format!("chi_f[{i}]")).map(Some),
            })
            .collect::<Result<Vec<_>, _>>()?;
        if chi_f.len() != n {
            return Err(bad("chi_f", format!("expected {n} components, got {}", chi_f.len())));
        }
        match system {
            System::Vdp if chi_f.iter().all(Option::is_none) => {
                return Err(bad("chi_f", "at least one component must be fixed"));
            }
            System::Dubins2d if chi_f.iter().any(Option::is_none) => {
                return Err(bad("chi_f", "free components are not supported for dubins2d"));
            }
            System::Dubins3d => {
                if chi_f[..3].iter().any(Option::is_none) {
                    return Err(bad("chi_f", "position components must be fixed"));
                }
                let free = chi_f[3..].iter().filter(|c| c.is_none()).count();
                if free == 1 || free == 2 {
                    return Err(bad("chi_f", "the terminal tangent is either fully fixed or fully free"));
                }
                if free == 0 {
                    let t: Vec<f64> = chi_f[3..].iter().flatten().copied().collect();
                    unit3(&t, "chi_f")?;
                }
            }
            _ => {}
        }

        let solver = parse_solver(obj.get("solver"), system, chi_f.iter().filter(|c| c.is_none()).count())?;
        Ok(Self {
            system,
            chi_i,
            chi_f,
            t_final,
            solver,
        })
    }

    /// The spec in its file format, with defaults filled in.
    pub fn to_value(&self) -> Value {
        let chi_f: Vec<Value> = self
            .chi_f
            .iter()
            .map(|c| c.map_or_else(|| Value::from("free"), Value::from))
            .collect();
        let mut solver = serde_json::to_value(&self.solver).expect("solver settings serialize");
        if self.system != System::Dubins3d {
            solver.as_object_mut().expect("object").remove("families");
        }
        serde_json::json!({
            "system": self.system,
            "chi_i": self.chi_i,
            "chi_f": chi_f,
            "T": self.t_final,
            "solver": solver,
        })
    }

    pub fn from_value(v: &Value) -> Result<Self, SpecError> {
        Self::from_object(v.as_object().ok_or_else(|| bad("spec", "expected a JSON object"))?)
    }
}

fn parse_solver(v: Option<&Value>, system: System, n_free: usize) -> Result<SolverSpec, SpecError> {
    let mut s = SolverSpec {
        starts: match system {
            System::Vdp => 100,
            _ => 8,
        },
        seed: 0,
        residual_tol: match system {
            System::Dubins2d => 1e-10,
            _ => 1e-9,
        },
        families: vec![Family::Cs, Family::H],
        tau_seed: None,
        freed_seed: None,
        tangent_seed: None,
    };
    let Some(v) = v else {
        return Ok(s);
    };
    let obj = v.as_object().ok_or_else(|| bad("solver", "expected an object"))?;
    for (key, val) in obj {
        let field = format!("solver.{key}");
        match key.as_str() {
            "starts" => {
                s.starts = val
                    .as_u64()
                    .filter(|n| *n >= 1)
                    .ok_or_else(|| bad(&field, "expected a positive integer"))? as usize;
            }
            "seed" => s.seed = val.as_u64().ok_or_else(|| bad(&field, "expected a nonnegative integer"))?,
            "residual_tol" => {
                s.residual_tol = number(val, &field)?;
                if s.residual_tol <= 0.0 {
                    return Err(bad(&field, "must be positive"));
                }
            }
            "families" if system == System::Dubins3d => {
                let list = val.as_array().ok_or_else(|| bad(&field, "expected an array"))?;
                s.families = list
                    .iter()
                    .map(|f| match f.as_str() {
                        Some("cs") => Ok(Family::Cs),
                        Some("h") => Ok(Family::H),
                        _ => Err(bad(&field, format!("expected \"cs\" or \"h\", got {f}"))),
                    })
                    .collect::<Result<_, _>>()?;
                if s.families.is_empty() {
                    return Err(bad(&field, "must not be empty"));
                }
            }
            "tau_seed" if system == System::Vdp => {
                let t = number(val, &field)?;
                if !(0.0..=1.0).contains(&t) {
                    return Err(bad(&field, "must lie in [0, 1]"));
                }
                s.tau_seed = Some(t);
            }
            "freed_seed" if system == System::Vdp => {
                let f = numbers(val, &field)?;
                if f.len() != n_free {
                    return Err(bad(&field, format!("expected {n_free} values, one per free component")));
                }
                s.freed_seed = Some(f);
            }
            "tangent_seed" if system == System::Dubins3d => {
                if n_free == 0 {
                    return Err(bad(&field, "only applies with a free terminal tangent"));
                }
                s.tangent_seed = Some(unit3(&numbers(val, &field)?, &field)?);
            }
            _ => return Err(bad(&field, format!("unknown or not applicable to {system:?}"))),
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vdp_defaults() {
        let s = ProblemSpec::from_json(r#"{"system":"vdp","chi_i":"default","chi_f":[0,"free"],"T":4}"#).unwrap();
        assert_eq!(s.chi_i, vec![2.0, 2.0]);
        assert_eq!(s.chi_f, vec![Some(0.0), None]);
        assert_eq!(s.solver.starts, 100);
    }

    #[test]
    fn round_trips_through_file_format() {
        let s = ProblemSpec::from_json(
            r#"{"system":"dubins3d","chi_i":"default","chi_f":[4,0,0,"free","free","free"],"T":12.5,"solver":{"tangent_seed":[0,1,0]}}"#,
        )
        .unwrap();
        assert_eq!(ProblemSpec::from_value(&s.to_value()).unwrap(), s);
        let v = ProblemSpec::from_json(r#"{"system":"vdp","chi_i":[1,1],"chi_f":[0,"free"],"T":4}"#).unwrap();
        assert_eq!(ProblemSpec::from_value(&v.to_value()).unwrap(), v);
    }

    #[test]
    fn missing_t_names_the_field() {
        let e = ProblemSpec::from_json(r#"{"system":"vdp","chi_i":"default","chi_f":[0,0]}"#).unwrap_err();
        assert_eq!(e.field, "T");
    }

    #[test]
    fn bad_component_is_located() {
        let e = ProblemSpec::from_json(r#"{"system":"dubins2d","chi_i":"default","chi_f":[4,"x",0],"T":3}"#).unwrap_err();
        assert_eq!(e.field, "chi_f[1]");
        let e = ProblemSpec::from_json(r#"{"system":"dubins3d","chi_i":"default","chi_f":[4,0,0,"free",0,"free"],"T":3}"#)
            .unwrap_err();
        assert_eq!(e.field, "chi_f");
        let e = ProblemSpec::from_json(r#"{"system":"vdp","chi_i":"default","chi_f":[0,0],"T":4,"solver":{"families":["cs"]}}"#)
            .unwrap_err();
        assert_eq!(e.field, "solver.families");
    }
}
