use serde::{Deserialize, Serialize};

use super::QueryError;

/// System message. Asks for the three labeled sections the parser reads.
pub const SYSTEM_PROMPT: &str = "\
You are a helpful assistant for a computer vision task, providing structured information about objects to pay attention to while driving. \
Include both important objects and nearby objects that might be at the borders.
Format your response exactly as follows:
Main Positive: <object to pay attention to>
Helping Positives:
- <1-4 related terms or attributes, one per line>
Negatives:
- <4-6 objects to differentiate from, including similar objects, nearby objects, and background elements, one per line>";

const ATTENTION_TEMPLATE: &str =
    "Driving through an intersection in an {road_type} on a {weather} {time_of_day}, what objects should the driver pay attention to?";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptMode {
    Attention,
    Object,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptContext {
    pub mode: PromptMode,
    #[serde(default)]
    pub road_type: String,
    #[serde(default)]
    pub weather: String,
    #[serde(default)]
    pub time_of_day: String,
    #[serde(default)]
    pub object: Option<String>,
}

impl PromptContext {
    pub fn attention(road_type: &str, weather: &str, time_of_day: &str) -> Self {
        Self {
            mode: PromptMode::Attention,
            road_type: road_type.into(),
            weather: weather.into(),
            time_of_day: time_of_day.into(),
            object: None,
        }
    }

    pub fn object(object: &str) -> Self {
        Self {
            mode: PromptMode::Object,
            road_type: String::new(),
            weather: String::new(),
            time_of_day: String::new(),
            object: Some(object.into()),
        }
    }

    pub fn validate(&self) -> Result<(), QueryError> {
        let blank = |s: &str| s.trim().is_empty();
        match self.mode {
            PromptMode::Attention => {
                if self.object.is_some() {
                    return Err(QueryError::Context("attention mode takes no object".into()));
                }
                for (name, v) in [
                    ("road_type", &self.road_type),
                    ("weather", &self.weather),
                    ("time_of_day", &self.time_of_day),
                ] {
                    if blank(v) {
                        return Err(QueryError::Context(format!("missing {name}")));
                    }
                }
            }
            PromptMode::Object => match &self.object {
                Some(o) if !blank(o) => {}
                _ => return Err(QueryError::Context("object mode needs an object".into())),
            },
        }
        Ok(())
    }
}

/// Returns `(system, user)` message texts.
pub fn build_prompt(ctx: &PromptContext) -> Result<(String, String), QueryError> {
    ctx.validate()?;
    let user = match ctx.mode {
        PromptMode::Attention => ATTENTION_TEMPLATE
            .replace("{road_type}", ctx.road_type.trim())
            .replace("{weather}", ctx.weather.trim())
            .replace("{time_of_day}", ctx.time_of_day.trim()),
        PromptMode::Object => format!("show the {}.", ctx.object.as_deref().unwrap_or_default().trim()),
    };
    Ok((SYSTEM_PROMPT.to_string(), user))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn object_mode_user_text() {
        let (system, user) = build_prompt(&PromptContext::object("cars")).unwrap();
        assert_eq!(user, "show the cars.");
        for header in ["Main Positive", "Helping Positives", "Negatives", "1-4", "4-6"] {
            assert!(system.contains(header), "{header}");
        }
    }

    #[test]
    fn attention_mode_substitutes_metadata() {
        let ctx = PromptContext::attention("urban street", "rainy", "evening");
        let (_, user) = build_prompt(&ctx).unwrap();
        assert_eq!(
            user,
            "Driving through an intersection in an urban street on a rainy evening, what objects should the driver pay attention to?"
        );
        assert_eq!(build_prompt(&ctx).unwrap(), build_prompt(&ctx.clone()).unwrap());
    }

    #[test]
    fn missing_metadata_rejected() {
        let mut ctx = PromptContext::attention("urban street", "", "evening");
        assert!(build_prompt(&ctx).is_err());
        ctx.weather = "sunny".into();
        ctx.object = Some("cars".into());
        assert!(build_prompt(&ctx).is_err());
        let mut obj = PromptContext::object("  ");
        assert!(build_prompt(&obj).is_err());
        obj.object = None;
        assert!(build_prompt(&obj).is_err());
    }
}
