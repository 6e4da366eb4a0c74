//! Serialisation of gold structures to the target JSON schema and
//! parsing/validation of model output back into structures.
//!
//! The byte format is pinned in `SCHEMA.md`: objects use `": "` between key
//! and value and `", "` between items, keys appear in a fixed order, and a
//! missing description is written as `null`. Equal inputs always produce
//! identical bytes.

use serde::{Deserialize, Serialize};

use crate::align::AnnotatedDocument;

/// One entity entry in the target schema, in output key order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetEntity {
    pub mention: String,
    pub title: String,
    #[serde(rename = "type")]
    pub types: Vec<String>,
    pub description: Option<String>,
    pub aliases: Vec<String>,
}

/// One relation entry; endpoints are mention surface strings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetTriplet {
    pub head: String,
    pub tail: String,
    pub relations: Vec<String>,
}

/// The JSON structure a model is asked to emit: all extracted entities in
/// mention order plus the relation triplets between them.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TargetObject {
    pub entities: Vec<TargetEntity>,
    pub triplets: Vec<TargetTriplet>,
}

impl TargetObject {
    /// Project an annotated document onto the target schema. Entities keep
    /// mention order; triplet endpoints become the endpoint mention surfaces.
    pub fn from_document(doc: &AnnotatedDocument) -> Self {
        let entities = doc
            .mentions
            .iter()
            .map(|m| TargetEntity {
                mention: m.surface.clone(),
                title: m.profile.title.clone(),
                types: m.profile.types.clone(),
                description: m.profile.description.clone(),
                aliases: m.profile.aliases.clone(),
            })
            .collect();
        let triplets = doc
            .triplets
            .iter()
            .map(|t| TargetTriplet {
                head: doc.mentions[t.head_idx].surface.clone(),
                tail: doc.mentions[t.tail_idx].surface.clone(),
                relations: t.relations.clone(),
            })
            .collect();
        TargetObject { entities, triplets }
    }
}

/// Serialise a document's gold structure to target-schema JSON text.
pub fn serialize(doc: &AnnotatedDocument) -> String {
    to_json_text(&TargetObject::from_document(doc))
}

/// Render a [`TargetObject`] in the pinned byte format.
pub fn to_json_text(target: &TargetObject) -> String {
    let mut out = String::new();
    out.push_str("{\"entities\": [");
    for (i, e) in target.entities.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str("{\"mention\": ");
        write_str(&mut out, &e.mention);
        out.push_str(", \"title\": ");
        write_str(&mut out, &e.title);
        out.push_str(", \"type\": ");
        write_str_list(&mut out, &e.types);
        out.push_str(", \"description\": ");
        match &e.description {
            Some(d) => write_str(&mut out, d),
            None => out.push_str("null"),
        }
        out.push_str(", \"aliases\": ");
        write_str_list(&mut out, &e.aliases);
        out.push('}');
    }
    out.push_str("], \"triplets\": [");
    for (i, t) in target.triplets.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str("{\"head\": ");
        write_str(&mut out, &t.head);
        out.push_str(", \"tail\": ");
        write_str(&mut out, &t.tail);
        out.push_str(", \"relations\": ");
        write_str_list(&mut out, &t.relations);
        out.push('}');
    }
    out.push_str("]}");
    out
}

fn write_str_list(out: &mut String, items: &[String]) {
    out.push('[');
    for (i, s) in items.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        write_str(out, s);
    }
    out.push(']');
}

// JSON string escape: quote, backslash and control characters only;
// non-ASCII stays as UTF-8.
fn write_str(out: &mut String, s: &str) {
    out.push('"');
    for ch in s.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            '\u{08}' => out.push_str("\\b"),
            '\u{0c}' => out.push_str("\\f"),
            c if (c as u32) < 0x20 => {
                out.push_str(&format!("\\u{:04x}", c as u32));
            }
            c => out.push(c),
        }
    }
    out.push('"');
}

/// Validation strictness for [`parse_and_validate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum ParseMode {
    /// Exactly the schema keys; `description` and `aliases` must be present.
    #[default]
    Strict,
    /// Extra keys tolerated; `description`/`aliases` may be omitted.
    Lenient,
}

/// Outcome of parsing model output text.
#[derive(Debug, Clone, PartialEq)]
pub enum ParseOutcome {
    Ok(TargetObject),
    /// Not well-formed JSON. `position` is `(line, column)` in the input.
    DecodeError { position: (usize, usize), message: String },
    /// Well-formed JSON that violates the target schema shape.
    SchemaError { path: String, message: String },
}

impl ParseOutcome {
    pub fn is_ok(&self) -> bool {
        matches!(self, ParseOutcome::Ok(_))
    }

    pub fn ok(self) -> Option<TargetObject> {
        match self {
            ParseOutcome::Ok(t) => Some(t),
            _ => None,
        }
    }
}

/// Parse model output text against the target schema.
///
/// Returns `DecodeError` iff the text is not well-formed JSON, `SchemaError`
/// iff it is well-formed but the wrong shape. Never aborts.
pub fn parse_and_validate(text: &str, mode: ParseMode) -> ParseOutcome {
    let value: serde_json::Value = match serde_json::from_str(text) {
        Ok(v) => v,
        Err(e) => {
            return ParseOutcome::DecodeError {
                position: (e.line(), e.column()),
                message: e.to_string(),
            }
        }
    };
    match validate_value(&value, mode) {
        Ok(target) => ParseOutcome::Ok(target),
        Err((path, message)) => ParseOutcome::SchemaError { path, message },
    }
}

type SchemaFault = (String, String);

fn validate_value(value: &serde_json::Value, mode: ParseMode) -> Result<TargetObject, SchemaFault> {
    use serde_json::Value;

    let obj = value
        .as_object()
        .ok_or_else(|| err("$", "top level must be an object"))?;
    if mode == ParseMode::Strict {
        for key in obj.keys() {
            if key != "entities" && key != "triplets" {
                return Err(err("$", &format!("unexpected key {key:?}")));
            }
        }
    }
    let entities_val = obj
        .get("entities")
        .ok_or_else(|| err("$", "missing key \"entities\""))?;
    let triplets_val = obj
        .get("triplets")
        .ok_or_else(|| err("$", "missing key \"triplets\""))?;

    let entities_arr = entities_val
        .as_array()
        .ok_or_else(|| err("$.entities", "must be an array"))?;
    let mut entities = Vec::with_capacity(entities_arr.len());
    for (i, item) in entities_arr.iter().enumerate() {
        let path = format!("$.entities[{i}]");
        let e = item
            .as_object()
            .ok_or_else(|| err(&path, "must be an object"))?;
        if mode == ParseMode::Strict {
            for key in e.keys() {
                if !["mention", "title", "type", "description", "aliases"].contains(&key.as_str()) {
                    return Err(err(&path, &format!("unexpected key {key:?}")));
                }
            }
        }
        let mention = require_string(e, "mention", &path)?;
        let title = require_string(e, "title", &path)?;
        let types = require_string_list(e, "type", &path)?;
        let description = match e.get("description") {
            Some(Value::Null) => None,
            Some(Value::String(s)) => Some(s.clone()),
            Some(_) => return Err(err(&format!("{path}.description"), "must be a string or null")),
            None if mode == ParseMode::Lenient => None,
            None => return Err(err(&format!("{path}.description"), "missing required key")),
        };
        let aliases = match e.get("aliases") {
            Some(v) => string_list(v, &format!("{path}.aliases"))?,
            None if mode == ParseMode::Lenient => Vec::new(),
            None => return Err(err(&format!("{path}.aliases"), "missing required key")),
        };
        entities.push(TargetEntity { mention, title, types, description, aliases });
    }

    let triplets_arr = triplets_val
        .as_array()
        .ok_or_else(|| err("$.triplets", "must be an array"))?;
    let mut triplets = Vec::with_capacity(triplets_arr.len());
    for (i, item) in triplets_arr.iter().enumerate() {
        let path = format!("$.triplets[{i}]");
        let t = item
            .as_object()
            .ok_or_else(|| err(&path, "must be an object"))?;
        if mode == ParseMode::Strict {
            for key in t.keys() {
                if !["head", "tail", "relations"].contains(&key.as_str()) {
                    return Err(err(&path, &format!("unexpected key {key:?}")));
                }
            }
        }
        let head = require_string(t, "head", &path)?;
        let tail = require_string(t, "tail", &path)?;
        let relations = require_string_list(t, "relations", &path)?;
        triplets.push(TargetTriplet { head, tail, relations });
    }

    Ok(TargetObject { entities, triplets })
}

fn err(path: &str, message: &str) -> SchemaFault {
    (path.to_string(), message.to_string())
}

fn require_string(
    obj: &serde_json::Map<String, serde_json::Value>,
    key: &str,
    path: &str,
) -> Result<String, SchemaFault> {
    obj.get(key)
        .ok_or_else(|| err(&format!("{path}.{key}"), "missing required key"))?
        .as_str()
        .map(str::to_owned)
        .ok_or_else(|| err(&format!("{path}.{key}"), "must be a string"))
}

fn require_string_list(
    obj: &serde_json::Map<String, serde_json::Value>,
    key: &str,
    path: &str,
) -> Result<Vec<String>, SchemaFault> {
    let v = obj
        .get(key)
        .ok_or_else(|| err(&format!("{path}.{key}"), "missing required key"))?;
    string_list(v, &format!("{path}.{key}"))
}

fn string_list(v: &serde_json::Value, path: &str) -> Result<Vec<String>, SchemaFault> {
    let arr = v.as_array().ok_or_else(|| err(path, "must be an array"))?;
    arr.iter()
        .enumerate()
        .map(|(i, item)| {
            item.as_str()
                .map(str::to_owned)
                .ok_or_else(|| err(&format!("{path}[{i}]"), "must be a string"))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::{AnnotatedDocument, EntityProfile, MentionAnnotation, RelationTripletAnnotation};

    fn profile(title: &str) -> EntityProfile {
        EntityProfile {
            qid: "Q64".into(),
            title: title.into(),
            types: vec!["city".into()],
            type_qids: vec!["Q515".into()],
            description: Some("capital of Germany".into()),
            aliases: vec!["Berlin, Germany".into()],
        }
    }

    #[test]
    fn empty_document_serialises_to_empty_schema() {
        let doc = AnnotatedDocument {
            doc_id: "1".into(),
            text: String::new(),
            mentions: vec![],
            triplets: vec![],
        };
        assert_eq!(serialize(&doc), r#"{"entities": [], "triplets": []}"#);
    }

    #[test]
    fn single_mention_keys_in_declared_order() {
        let doc = AnnotatedDocument {
            doc_id: "1".into(),
            text: "Berlin".into(),
            mentions: vec![MentionAnnotation {
                span: (0, 6),
                surface: "Berlin".into(),
                profile: profile("Berlin"),
            }],
            triplets: vec![],
        };
        let text = serialize(&doc);
        assert_eq!(
            text,
            "{\"entities\": [{\"mention\": \"Berlin\", \"title\": \"Berlin\", \
             \"type\": [\"city\"], \"description\": \"capital of Germany\", \
             \"aliases\": [\"Berlin, Germany\"]}], \"triplets\": []}"
        );
    }

    #[test]
    fn triplet_heads_reference_entity_mentions() {
        let mut p2 = profile("Germany");
        p2.qid = "Q183".into();
        let doc = AnnotatedDocument {
            doc_id: "1".into(),
            text: "Berlin Germany".into(),
            mentions: vec![
                MentionAnnotation { span: (0, 6), surface: "Berlin".into(), profile: profile("Berlin") },
                MentionAnnotation { span: (7, 14), surface: "Germany".into(), profile: p2 },
            ],
            triplets: vec![RelationTripletAnnotation {
                head_idx: 0,
                tail_idx: 1,
                relations: vec!["country".into()],
            }],
        };
        let parsed = parse_and_validate(&serialize(&doc), ParseMode::Strict)
            .ok()
            .unwrap();
        let heads: Vec<&str> = parsed.entities.iter().map(|e| e.mention.as_str()).collect();
        assert!(heads.contains(&parsed.triplets[0].head.as_str()));
    }

    #[test]
    fn round_trip_equals_projection() {
        let doc = AnnotatedDocument {
            doc_id: "1".into(),
            text: "Berlin \"quoted\" \\ and\nnewline".into(),
            mentions: vec![MentionAnnotation {
                span: (0, 6),
                surface: "Berlin \"quoted\" \\ and\nnewline".into(),
                profile: EntityProfile {
                    qid: "Q64".into(),
                    title: "Straße\t1".into(),
                    types: vec![],
                    type_qids: vec![],
                    description: None,
                    aliases: vec![],
                },
            }],
            triplets: vec![],
        };
        let target = TargetObject::from_document(&doc);
        let parsed = parse_and_validate(&to_json_text(&target), ParseMode::Strict);
        assert_eq!(parsed, ParseOutcome::Ok(target));
    }

    #[test]
    fn malformed_json_is_a_decode_error() {
        match parse_and_validate("{\"entities\": }", ParseMode::Strict) {
            ParseOutcome::DecodeError { .. } => {}
            other => panic!("expected decode error, got {other:?}"),
        }
    }

    #[test]
    fn missing_mention_key_is_a_schema_error_at_path() {
        match parse_and_validate("{\"entities\": [{}], \"triplets\": []}", ParseMode::Strict) {
            ParseOutcome::SchemaError { path, .. } => {
                assert_eq!(path, "$.entities[0].mention");
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn lenient_tolerates_extra_and_missing_optional_keys() {
        let text = "{\"entities\": [{\"mention\": \"x\", \"title\": \"x\", \"type\": [], \"confidence\": 0.9}], \"triplets\": [], \"note\": 1}";
        assert!(!parse_and_validate(text, ParseMode::Strict).is_ok());
        let parsed = parse_and_validate(text, ParseMode::Lenient).ok().unwrap();
        assert_eq!(parsed.entities[0].description, None);
        assert!(parsed.entities[0].aliases.is_empty());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            // Arbitrary strings (quotes, control chars, unicode) survive
            // escaping and re-parse to the identical structure.
            #[test]
            fn any_strings_round_trip(
                mention in ".*",
                title in ".*",
                ty in ".*",
                desc in proptest::option::of(".*"),
                alias in ".*",
            ) {
                let target = TargetObject {
                    entities: vec![TargetEntity {
                        mention,
                        title,
                        types: vec![ty],
                        description: desc,
                        aliases: vec![alias],
                    }],
                    triplets: vec![],
                };
                let text = to_json_text(&target);
                prop_assert_eq!(parse_and_validate(&text, ParseMode::Strict), ParseOutcome::Ok(target));
            }

            // Distinct projections give distinct bytes.
            #[test]
            fn serialization_is_injective(a in ".*", b in ".*") {
                prop_assume!(a != b);
                let make = |m: &str| TargetObject {
                    entities: vec![TargetEntity {
                        mention: m.to_string(),
                        title: String::new(),
                        types: vec![],
                        description: None,
                        aliases: vec![],
                    }],
                    triplets: vec![],
                };
                prop_assert_ne!(to_json_text(&make(&a)), to_json_text(&make(&b)));
            }
        }
    }

    #[test]
    fn strict_acceptance_implies_lenient_acceptance() {
        let texts = [
            r#"{"entities": [], "triplets": []}"#,
            "{\"entities\": [{\"mention\": \"a\", \"title\": \"b\", \"type\": [\"t\"], \"description\": null, \"aliases\": []}], \"triplets\": []}",
        ];
        for t in texts {
            assert!(parse_and_validate(t, ParseMode::Strict).is_ok());
            assert!(parse_and_validate(t, ParseMode::Lenient).is_ok());
        }
    }
}
