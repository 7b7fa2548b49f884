//! From tag paths to event records, and corpus-level extraction.

use super::model::TaggerModel;
use super::tags::{Tag, TagSpace};
use crate::corpus::{AnnotatedEvent, AnnotatedSentence, ArgumentSpan, EventRecord, EventSchema, NewsItem};
use crate::error::Result;

const SENTENCE_END: [char; 6] = ['。', '！', '？', '.', '!', '?'];
const INFER_BATCH: usize = 64;

/// Sentences of `text` as `(char_offset, chars)`, terminators kept.
pub fn split_sentences(text: &str) -> Vec<(usize, Vec<char>)> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut start = 0;
    for (i, &c) in chars.iter().enumerate() {
        if SENTENCE_END.contains(&c) {
            push_trimmed(&chars, start, i + 1, &mut out);
            start = i + 1;
        }
    }
    push_trimmed(&chars, start, chars.len(), &mut out);
    out
}

fn push_trimmed(chars: &[char], mut s: usize, mut e: usize, out: &mut Vec<(usize, Vec<char>)>) {
    while s < e && chars[s].is_whitespace() {
        s += 1;
    }
    while e > s && chars[e - 1].is_whitespace() {
        e -= 1;
    }
    if s < e {
        out.push((s, chars[s..e].to_vec()));
    }
}

/// Groups maximal B-I runs into one record per event type, in order of the
/// type's first argument.
pub fn assemble_events(chars: &[char], path: &[usize], tags: &TagSpace, schema: &EventSchema) -> Vec<EventRecord> {
    let mut records: Vec<EventRecord> = Vec::new();
    let mut t = 0;
    while t < path.len() {
        let Tag::B(k) = tags.tag(path[t]) else {
            t += 1;
            continue;
        };
        let mut end = t + 1;
        while end < path.len() && tags.tag(path[end]) == Tag::I(k) {
            end += 1;
        }
        let (event_type, role) = &tags.slots()[k];
        let span = ArgumentSpan {
            role: role.clone(),
            argument: chars[t..end].iter().collect(),
            start: t,
        };
        match records.iter_mut().find(|r| &r.event_type == event_type) {
            Some(r) => r.arguments.push(span),
            None => records.push(EventRecord {
                event_type: event_type.clone(),
                arguments: vec![span],
                class: schema.class_of(event_type).to_owned(),
            }),
        }
        t = end;
    }
    records
}

/// Cleans decoded records: trims arguments, drops blank or punctuation-only
/// arguments, removes repeated (type, role, argument) triples and drops
/// records left without arguments.
pub fn filter_rules(records: Vec<EventRecord>) -> Vec<EventRecord> {
    let mut seen: Vec<(String, String, String)> = Vec::new();
    let mut out = Vec::new();
    for mut r in records {
        let mut kept = Vec::new();
        for a in r.arguments {
            let lead = a.argument.chars().take_while(|c| c.is_whitespace()).count();
            let trimmed = a.argument.trim().to_owned();
            if trimmed.chars().all(|c| c.is_whitespace() || is_punctuation(c)) {
                continue;
            }
            let key = (r.event_type.clone(), a.role.clone(), trimmed.clone());
            if seen.contains(&key) {
                continue;
            }
            seen.push(key);
            kept.push(ArgumentSpan {
                role: a.role,
                argument: trimmed,
                start: a.start + lead,
            });
        }
        if !kept.is_empty() {
            r.arguments = kept;
            out.push(r);
        }
    }
    out
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '。' | '，' | '、' | '；' | '：' | '！' | '？' | '“' | '”' | '‘' | '’' | '（' | '）' | '《' | '》' | '…' | '—'
        )
}

/// Extracted records per sentence.
pub fn extract_sentences(model: &TaggerModel, sentences: &[Vec<char>]) -> Result<Vec<Vec<EventRecord>>> {
    let mut out = Vec::with_capacity(sentences.len());
    for chunk in sentences.chunks(INFER_BATCH) {
        let paths = model.decode_batch(chunk)?;
        for (chars, path) in chunk.iter().zip(&paths) {
            let records = assemble_events(chars, path, model.tags(), model.schema());
            out.push(filter_rules(records));
        }
    }
    Ok(out)
}

/// Fills `events` of every news item from its body; argument offsets are
/// relative to the body.
pub fn extract_corpus(model: &TaggerModel, news: &[NewsItem]) -> Result<Vec<NewsItem>> {
    let mut owners = Vec::new();
    let mut sentences = Vec::new();
    for (i, n) in news.iter().enumerate() {
        for (offset, chars) in split_sentences(&n.body) {
            owners.push((i, offset));
            sentences.push(chars);
        }
    }
    let extracted = extract_sentences(model, &sentences)?;
    let mut out: Vec<NewsItem> = news
        .iter()
        .map(|n| NewsItem {
            events: Vec::new(),
            ..n.clone()
        })
        .collect();
    for ((i, offset), records) in owners.into_iter().zip(extracted) {
        for mut r in records {
            for a in &mut r.arguments {
                a.start += offset;
            }
            out[i].events.push(r);
        }
    }
    Ok(out)
}

/// Predictions for annotated sentences in the same shape, for evaluation.
pub fn predict_annotated(model: &TaggerModel, gold: &[AnnotatedSentence]) -> Result<Vec<AnnotatedSentence>> {
    let chars: Vec<Vec<char>> = gold.iter().map(AnnotatedSentence::chars).collect();
    let records = extract_sentences(model, &chars)?;
    Ok(gold
        .iter()
        .zip(records)
        .map(|(g, rs)| AnnotatedSentence {
            id: g.id.clone(),
            text: g.text.clone(),
            events: rs
                .into_iter()
                .map(|r| AnnotatedEvent {
                    event_type: r.event_type,
                    arguments: r.arguments,
                })
                .collect(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::EventTypeDef;

    fn layoff_schema() -> EventSchema {
        EventSchema::new(vec![EventTypeDef {
            name: "Organizational-Relations/Layoff".into(),
            roles: vec!["layoff executor".into(), "number of job cut".into()],
        }])
        .unwrap()
    }

    fn path_for(n: usize, spans: &[(usize, usize, usize)], tags: &TagSpace) -> Vec<usize> {
        let mut p = vec![0; n];
        for &(s, e, k) in spans {
            p[s] = tags.index(Tag::B(k));
            for x in &mut p[s + 1..e] {
                *x = tags.index(Tag::I(k));
            }
        }
        p
    }

    #[test]
    fn layoff_example_assembles_to_one_record() {
        let schema = layoff_schema();
        let tags = TagSpace::new(&schema);
        let chars: Vec<char> = "Charles Schwab will cut 600 jobs.".chars().collect();
        let path = path_for(chars.len(), &[(0, 14, 0), (24, 27, 1)], &tags);
        let recs = filter_rules(assemble_events(&chars, &path, &tags, &schema));
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].event_type, "Organizational-Relations/Layoff");
        assert_eq!(recs[0].class, "Organizational-Relations");
        let mut args: Vec<(&str, &str)> = recs[0]
            .arguments
            .iter()
            .map(|a| (a.role.as_str(), a.argument.as_str()))
            .collect();
        args.sort();
        assert_eq!(
            args,
            vec![("layoff executor", "Charles Schwab"), ("number of job cut", "600")]
        );
    }

    #[test]
    fn all_outside_path_is_empty() {
        let schema = layoff_schema();
        let tags = TagSpace::new(&schema);
        assert!(assemble_events(&['a', 'b'], &[0, 0], &tags, &schema).is_empty());
    }

    #[test]
    fn two_runs_of_one_slot_share_a_record() {
        let schema = layoff_schema();
        let tags = TagSpace::new(&schema);
        let chars: Vec<char> = "ab and cd".chars().collect();
        let path = path_for(chars.len(), &[(0, 2, 0), (7, 9, 0)], &tags);
        let recs = assemble_events(&chars, &path, &tags, &schema);
        assert_eq!(recs.len(), 1);
        let args: Vec<&str> = recs[0].arguments.iter().map(|a| a.argument.as_str()).collect();
        assert_eq!(args, vec!["ab", "cd"]);
        assert!(recs[0].arguments.iter().all(|a| a.role == "layoff executor"));
    }

    #[test]
    fn adjacent_b_tags_start_new_runs() {
        let schema = layoff_schema();
        let tags = TagSpace::new(&schema);
        let b = tags.index(Tag::B(0));
        let recs = assemble_events(&['a', 'b'], &[b, b], &tags, &schema);
        assert_eq!(recs[0].arguments.len(), 2);
    }

    fn record(args: &[(&str, &str)]) -> EventRecord {
        EventRecord {
            event_type: "Organizational-Relations/Layoff".into(),
            arguments: args
                .iter()
                .map(|(r, a)| ArgumentSpan {
                    role: (*r).into(),
                    argument: (*a).into(),
                    start: 0,
                })
                .collect(),
            class: "Organizational-Relations".into(),
        }
    }

    #[test]
    fn filter_rules_cases() {
        assert!(filter_rules(vec![record(&[("layoff executor", "  ")])]).is_empty());
        assert!(filter_rules(vec![record(&[("layoff executor", ".,")])]).is_empty());
        let dup = filter_rules(vec![record(&[("layoff executor", "Acme"), ("layoff executor", "Acme")])]);
        assert_eq!(dup[0].arguments.len(), 1);
        let clean = vec![record(&[("layoff executor", "Acme"), ("number of job cut", "600")])];
        assert_eq!(filter_rules(clean.clone()), clean);
        let padded = filter_rules(vec![record(&[("layoff executor", " Acme ")])]);
        assert_eq!(padded[0].arguments[0].argument, "Acme");
        assert_eq!(padded[0].arguments[0].start, 1);
    }

    #[test]
    fn sentence_splitting() {
        let s = split_sentences("A b. C d! 好。 ");
        let texts: Vec<String> = s.iter().map(|(_, c)| c.iter().collect()).collect();
        assert_eq!(texts, vec!["A b.", "C d!", "好。"]);
        assert_eq!(s[1].0, 5);
        assert!(split_sentences("").is_empty());
    }
}
