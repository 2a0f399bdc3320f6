//! Chat-completion selector: instruction building, response parsing and the
//! retry loop.

use std::sync::{Arc, OnceLock};
use std::thread;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{PromptKind, RawOutput, SelectorConfig, SelectorError, StylePrompt};
use crate::annotation::AnnotationDictionary;
use crate::transport::{join_url, JsonTransport, TransportError};

/// Appended to every instruction, whatever the template says.
pub const FORMAT_DIRECTIVE: &str = "Reply with the key of the chosen label on its own line, \
in exactly this form: INDEX: <k>";

const SELECTION_TEMPLATE: &str = "Pick the label in the dictionary that best matches the \
speech style described below. Our dictionary is {dictionary}\n\nStyle description: {text}";

const INFERENCE_TEMPLATE: &str = "The sentence below is going to be spoken aloud. First infer \
the speaking style the sentence implies (emotion, tone, loudness, pitch, speaking rate), then \
pick the label in the dictionary that best matches that inferred style. Our dictionary is \
{dictionary}\n\nSentence: {text}";

/// Instruction text with `{dictionary}` and `{text}` placeholders, one
/// template per prompt kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub selection: String,
    pub inference: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            selection: SELECTION_TEMPLATE.to_string(),
            inference: INFERENCE_TEMPLATE.to_string(),
        }
    }
}

impl PromptTemplate {
    pub fn new(selection: String, inference: String) -> Result<Self, SelectorError> {
        for (name, t) in [("selection", &selection), ("inference", &inference)] {
            for placeholder in ["{dictionary}", "{text}"] {
                if !t.contains(placeholder) {
                    return Err(SelectorError::InvalidConfig(format!(
                        "{name} template lacks {placeholder}"
                    )));
                }
            }
        }
        Ok(Self { selection, inference })
    }

    pub fn from_json(text: &str) -> Result<Self, SelectorError> {
        let raw: PromptTemplate = serde_json::from_str(text)
            .map_err(|e| SelectorError::InvalidConfig(format!("template: {e}")))?;
        Self::new(raw.selection, raw.inference)
    }

    pub fn render(
        &self,
        prompt: &StylePrompt,
        dict: &AnnotationDictionary,
    ) -> Result<String, SelectorError> {
        if dict.is_empty() {
            return Err(SelectorError::EmptyDictionary);
        }
        let template = match prompt.kind() {
            PromptKind::StyleSelection => &self.selection,
            PromptKind::StyleInference => &self.inference,
        };
        let body = template
            .replace("{dictionary}", &serialize_dictionary(dict))
            .replace("{text}", prompt.text());
        Ok(format!("{body}\n\n{FORMAT_DIRECTIVE}"))
    }
}

/// `{1: "label", 2: "label", ...}` with JSON string escaping.
fn serialize_dictionary(dict: &AnnotationDictionary) -> String {
    let pairs: Vec<String> = dict
        .entries()
        .map(|e| {
            format!(
                "{}: {}",
                e.index,
                serde_json::to_string(&e.description).expect("string serializes")
            )
        })
        .collect();
    format!("{{{}}}", pairs.join(", "))
}

/// Builds the chat instruction with the default template.
pub fn build_llm_prompt(
    prompt: &StylePrompt,
    dict: &AnnotationDictionary,
) -> Result<String, SelectorError> {
    PromptTemplate::default().render(prompt, dict)
}

fn index_line_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?im)^[^\w\n]*INDEX[^\S\n]*[:：][^\S\n]*(\d+)").unwrap())
}

fn integer_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\d+").unwrap())
}

/// Recovers the chosen key from a model reply.
///
/// When the reply has `INDEX: <k>` lines, the first one naming a valid key
/// wins and none valid is an error. Otherwise: the first integer anywhere in
/// the reply that is a valid key, then the longest description that occurs
/// verbatim in the reply (smallest key on ties).
pub fn parse_llm_response(
    response: &str,
    dict: &AnnotationDictionary,
) -> Result<u32, SelectorError> {
    let unparseable = || SelectorError::Unparseable {
        raw: response.to_string(),
    };
    if response.trim().is_empty() {
        return Err(unparseable());
    }
    let valid = |s: &str| s.parse::<u32>().ok().filter(|k| dict.contains(*k));

    let mut directives = index_line_re().captures_iter(response).peekable();
    if directives.peek().is_some() {
        // An explicit answer outside the dictionary is a model error, not a
        // cue to go hunting for other numbers.
        return directives.find_map(|c| valid(&c[1])).ok_or_else(unparseable);
    }
    if let Some(k) = integer_re()
        .find_iter(response)
        .find_map(|m| valid(m.as_str()))
    {
        return Ok(k);
    }
    dict.entries()
        .filter(|e| response.contains(e.description.as_str()))
        .min_by_key(|e| (std::cmp::Reverse(e.description.len()), e.index))
        .map(|e| e.index)
        .ok_or_else(unparseable)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// Body of `POST {endpoint}/chat/completions`. Field order is wire order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub messages: Vec<ChatMessage>,
}

impl ChatRequest {
    pub fn user(model: &str, temperature: f64, content: String) -> Self {
        Self {
            model: model.to_string(),
            temperature,
            messages: vec![ChatMessage {
                role: "user".into(),
                content,
            }],
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("chat request serializes")
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct ChatResponse {
    pub choices: Vec<ChatChoice>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ChatChoice {
    pub message: ChatResponseMessage,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ChatResponseMessage {
    #[serde(default)]
    pub content: Option<String>,
}

impl ChatResponse {
    /// `choices[0].message.content`.
    pub fn content_from_json(url: &str, body: &str) -> Result<String, TransportError> {
        let malformed = |message: String| TransportError::MalformedResponse {
            url: url.to_string(),
            message,
        };
        let resp: ChatResponse = serde_json::from_str(body).map_err(|e| malformed(e.to_string()))?;
        resp.choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| malformed("no choices[0].message.content".into()))
    }
}

pub(super) struct LlmSelector {
    config: SelectorConfig,
    transport: Arc<dyn JsonTransport>,
    pub(super) template: PromptTemplate,
}

impl LlmSelector {
    pub(super) fn new(config: SelectorConfig, transport: Arc<dyn JsonTransport>) -> Self {
        Self {
            config,
            transport,
            template: PromptTemplate::default(),
        }
    }

    pub(super) fn select(
        &self,
        prompt: &StylePrompt,
        dict: &AnnotationDictionary,
    ) -> Result<(u32, RawOutput), SelectorError> {
        let instruction = self.template.render(prompt, dict)?;
        let body = ChatRequest::user(&self.config.model_name, self.config.temperature, instruction)
            .to_json();
        let url = join_url(&self.config.endpoint, "chat/completions");
        let attempts = self.config.max_retries + 1;

        let mut last_error = String::new();
        for attempt in 1..=attempts {
            if attempt > 1 && self.config.retry_backoff_ms > 0 {
                let factor = 1u64 << (attempt - 2).min(6);
                thread::sleep(Duration::from_millis(self.config.retry_backoff_ms * factor));
            }
            let outcome = self
                .transport
                .post_json(&url, &body, self.config.timeout())
                .and_then(|resp| ChatResponse::content_from_json(&url, &resp))
                .map_err(SelectorError::from)
                .and_then(|text| parse_llm_response(&text, dict).map(|k| (k, text)));
            match outcome {
                Ok((index, text)) => {
                    return Ok((index, RawOutput::LlmResponse { text, attempts: attempt }));
                }
                Err(e) => last_error = e.to_string(),
            }
        }
        Err(SelectorError::RetriesExhausted {
            attempts,
            last_error,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::AnnotationEntry;

    fn dict(keys: &[u32]) -> AnnotationDictionary {
        let entries = keys
            .iter()
            .map(|&k| AnnotationEntry::new(k, format!("style number {k}"), format!("u{k}")))
            .collect();
        AnnotationDictionary::from_entries(entries, None).unwrap()
    }

    fn table1() -> AnnotationDictionary {
        AnnotationDictionary::from_entries(
            vec![
                AnnotationEntry::new(1, "The tone of a shrill voice and an urgent cry for help", "r1"),
                AnnotationEntry::new(2, "Speaking privately with a speculative tone", "r2"),
                AnnotationEntry::new(3, "Somewhat weary and melancholic", "r3"),
                AnnotationEntry::new(4, "In a triumphant, proud tone", "r4"),
            ],
            None,
        )
        .unwrap()
    }

    #[test]
    fn selection_prompt_contains_dictionary_and_text() {
        let d = table1();
        let p = StylePrompt::selection("I whispered conspiracy.").unwrap();
        let s = build_llm_prompt(&p, &d).unwrap();
        assert!(s.contains("I whispered conspiracy."));
        assert!(s.contains(r#"2: "Speaking privately with a speculative tone""#));
        assert!(s.contains(r#"{1: "The tone of a shrill voice"#));
        assert!(s.contains("Pick the label in the dictionary"));
        assert!(s.contains("INDEX: <k>"));
        assert!(!s.contains("infer the speaking style"));
    }

    #[test]
    fn inference_prompt_asks_to_infer() {
        let d = table1();
        let p = StylePrompt::inference("Hurry up! Somebody call an ambulance!").unwrap();
        let s = build_llm_prompt(&p, &d).unwrap();
        assert!(s.contains("Hurry up! Somebody call an ambulance!"));
        assert!(s.contains("infer the speaking style"));
        assert!(s.contains("INDEX: <k>"));
    }

    #[test]
    fn descriptions_are_escaped() {
        let d = AnnotationDictionary::from_entries(
            vec![AnnotationEntry::new(9, "say \"hi\"", "r")],
            None,
        )
        .unwrap();
        let s = build_llm_prompt(&StylePrompt::selection("x").unwrap(), &d).unwrap();
        assert!(s.contains(r#"{9: "say \"hi\""}"#));
    }

    #[test]
    fn custom_template_needs_placeholders() {
        assert!(PromptTemplate::new("{text}".into(), "{dictionary} {text}".into()).is_err());
        let t = PromptTemplate::new("D={dictionary} T={text}".into(), "{dictionary}|{text}".into())
            .unwrap();
        let d = dict(&[1]);
        let s = t.render(&StylePrompt::selection("calm").unwrap(), &d).unwrap();
        assert!(s.starts_with(r#"D={1: "style number 1"} T=calm"#));
        assert!(s.ends_with(FORMAT_DIRECTIVE));
    }

    // Hand-built table of replies and the key each must resolve to.
    #[test]
    fn response_table() {
        let d = dict(&[1, 2, 3, 7, 12]);
        let cases: &[(&str, Option<u32>)] = &[
            ("INDEX: 2", Some(2)),
            ("index:3", Some(3)),
            ("**INDEX: 12**", Some(12)),
            ("Reasoning...\nINDEX: 7\n", Some(7)),
            ("INDEX：3", Some(3)),
            ("The best match is label 7, a striking tone.", Some(7)),
            ("I'd say 42 is not there but 3 is.", Some(3)),
            ("Between 100 and 12, choose 12", Some(12)),
            ("INDEX: 99\nbut maybe 2", None),
            ("INDEX: 4 then INDEX: 1", None),
            ("INDEX: 4\nINDEX: 1", Some(1)),
            ("The answer is \"style number 3\".", Some(3)),
            ("I cannot decide.", None),
            ("INDEX: 99", None),
            ("", None),
            ("   ", None),
        ];
        for (resp, expected) in cases {
            let got = parse_llm_response(resp, &d).ok();
            assert_eq!(got, *expected, "response {resp:?}");
        }
    }

    #[test]
    fn description_match_prefers_longest_then_smallest() {
        let d = AnnotationDictionary::from_entries(
            vec![
                AnnotationEntry::new(5, "calm", "a"),
                AnnotationEntry::new(6, "calm and slow", "b"),
                AnnotationEntry::new(8, "slow", "c"),
                AnnotationEntry::new(9, "fast", "d"),
            ],
            None,
        )
        .unwrap();
        assert_eq!(parse_llm_response("pick: calm and slow", &d).unwrap(), 6);
        assert_eq!(parse_llm_response("slow or fast", &d).unwrap(), 8);
    }

    #[test]
    fn unparseable_carries_raw() {
        match parse_llm_response("no idea", &dict(&[1])) {
            Err(SelectorError::Unparseable { raw }) => assert_eq!(raw, "no idea"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn chat_content_extraction() {
        let ok = r#"{"choices":[{"message":{"role":"assistant","content":"INDEX: 1"}}]}"#;
        assert_eq!(ChatResponse::content_from_json("u", ok).unwrap(), "INDEX: 1");
        for bad in [r#"{"choices":[]}"#, "not json", r#"{"choices":[{"message":{}}]}"#] {
            assert!(matches!(
                ChatResponse::content_from_json("u", bad),
                Err(TransportError::MalformedResponse { .. })
            ));
        }
    }
}
