//! CelebA attribute names and attribute targeting.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::losses::AttributeDistribution;

/// The 40 CelebA attributes in annotation order.
pub const CELEBA_ATTRIBUTES: [&str; 40] = [
    "5_o_Clock_Shadow",
    "Arched_Eyebrows",
    "Attractive",
    "Bags_Under_Eyes",
    "Bald",
    "Bangs",
    "Big_Lips",
    "Big_Nose",
    "Black_Hair",
    "Blond_Hair",
    "Blurry",
    "Brown_Hair",
    "Bushy_Eyebrows",
    "Chubby",
    "Double_Chin",
    "Eyeglasses",
    "Goatee",
    "Gray_Hair",
    "Heavy_Makeup",
    "High_Cheekbones",
    "Male",
    "Mouth_Slightly_Open",
    "Mustache",
    "Narrow_Eyes",
    "No_Beard",
    "Oval_Face",
    "Pale_Skin",
    "Pointy_Nose",
    "Receding_Hairline",
    "Rosy_Cheeks",
    "Sideburns",
    "Smiling",
    "Straight_Hair",
    "Wavy_Hair",
    "Wearing_Earrings",
    "Wearing_Hat",
    "Wearing_Lipstick",
    "Wearing_Necklace",
    "Wearing_Necktie",
    "Young",
];

const ALIASES: [(&str, &str); 1] = [("smile", "Smiling")];

fn normalize(name: &str) -> String {
    name.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

/// Index of an attribute, ignoring case, spaces and underscores
/// (`"Narrow Eyes"`, `"narrow_eyes"` and `"Narrow_Eyes"` all resolve).
pub fn attribute_index(name: &str) -> Result<usize> {
    let key = normalize(name);
    let canonical = ALIASES
        .iter()
        .find(|(alias, _)| *alias == key)
        .map(|(_, target)| normalize(target))
        .unwrap_or(key);
    CELEBA_ATTRIBUTES
        .iter()
        .position(|a| normalize(a) == canonical)
        .ok_or_else(|| Error::UnknownAttribute {
            name: name.to_string(),
            valid: CELEBA_ATTRIBUTES.iter().map(|s| s.to_string()).collect(),
        })
}

/// Replaces the named entries of `base` with fixed probabilities.
pub fn set_attribute_targets(
    base: &AttributeDistribution,
    overrides: &BTreeMap<String, f64>,
) -> Result<AttributeDistribution> {
    let mut out = base.clone();
    for (name, &value) in overrides {
        if !(value > 0.0 && value < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "target for '{name}' must lie strictly between 0 and 1, got {value}"
            )));
        }
        let index = attribute_index(name)?;
        if index >= out.len() {
            return Err(Error::ShapeMismatch {
                context: "attribute targets",
                expected: vec![crate::losses::N_ATTRIBUTES],
                actual: vec![out.len()],
            });
        }
        out.set(index, value);
    }
    Ok(out)
}

/// Parses `"Name=value"`.
pub fn parse_override(spec: &str) -> Result<(String, f64)> {
    let (name, value) = spec
        .split_once('=')
        .ok_or_else(|| Error::InvalidConfig(format!("attribute override '{spec}' is not of the form Name=value")))?;
    let value: f64 = value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("attribute override '{spec}' has a non-numeric value")))?;
    let name = name.trim();
    attribute_index(name)?;
    Ok((name.to_string(), value))
}
