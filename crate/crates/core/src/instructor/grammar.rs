//! Keyword grammar behind the offline language stub: instruction
//! classification and target-caption templates.

use super::{Classification, EditType};
use crate::error::{Error, Result};
use crate::scene::{join_list, Color};

const DETERMINERS: &[&str] = &["the", "a", "an", "this", "that", "these", "those", "some", "my", "its", "all"];

const STOPS: &[&str] = &[
    "from", "on", "onto", "in", "into", "to", "with", "at", "of", "near", "beside", "next", "by", "under",
    "over", "above", "below", "behind", "for", "and", "as", "around", "inside", "left", "right", "so",
    "instead", "then", "please",
];

const ANCHOR_PREPS: &[&str] = &[
    "to", "on", "onto", "next", "beside", "near", "above", "below", "under", "over", "behind", "in", "at",
    "around", "by", "left", "right", "inside",
];

const REMOVAL: &[&str] = &["remove", "delete", "erase", "eliminate", "clear", "wipe", "drop"];
const ADDITION: &[&str] = &["add", "insert", "put", "place", "include", "draw", "introduce", "attach"];
const LOCAL: &[&str] = &[
    "change", "turn", "make", "convert", "replace", "transform", "recolor", "recolour", "paint", "color",
    "colour", "swap", "switch", "modify", "edit", "alter",
];

const WEARABLES: &[&str] = &[
    "hat", "cap", "collar", "scarf", "glasses", "sunglasses", "shirt", "crown", "tie", "necklace", "bow",
    "helmet", "jacket", "coat", "mask",
];

const CONNECTORS: &[&str] = &["holding", "wearing", "with", "carrying", "eating", "next", "beside", "near", "behind"];

const EXTRA_COLORS: &[&str] = &["pink", "brown", "cyan", "magenta", "golden", "silver", "grey"];

/// Lower-case word tokens; punctuation other than apostrophes and hyphens
/// separates words.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '\'' || c == '-' { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .map(|s| s.trim_matches('\'').to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

pub fn is_color_word(w: &str) -> bool {
    Color::from_name(w).is_some() || EXTRA_COLORS.contains(&w)
}

fn is_stop(w: &str) -> bool {
    STOPS.contains(&w)
}

fn skip_determiners(tokens: &[String], mut i: usize) -> usize {
    while i < tokens.len() && DETERMINERS.contains(&tokens[i].as_str()) {
        i += 1;
    }
    i
}

/// Noun phrase starting at `i` (after determiners), ending before the next
/// stop word. Returns the phrase tokens and the index just past them.
fn noun_phrase(tokens: &[String], i: usize) -> (Vec<String>, usize) {
    let mut j = skip_determiners(tokens, i);
    let start = j;
    while j < tokens.len() && !is_stop(&tokens[j]) {
        j += 1;
    }
    (tokens[start..j].to_vec(), j)
}

/// Everything after `i` with leading determiners removed.
fn tail_phrase(tokens: &[String], i: usize) -> Vec<String> {
    let j = skip_determiners(tokens, i);
    tokens[j..].to_vec()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VerbClass {
    Removal,
    Addition,
    Local,
}

/// First recognised verb: its class and the index just past it.
fn find_verb(tokens: &[String]) -> Option<(VerbClass, usize, &str)> {
    for (i, w) in tokens.iter().enumerate() {
        let w = w.as_str();
        let next = tokens.get(i + 1).map(String::as_str);
        match (w, next) {
            ("get", Some("rid")) => {
                let after = if tokens.get(i + 2).map(String::as_str) == Some("of") { i + 3 } else { i + 2 };
                return Some((VerbClass::Removal, after, "remove"));
            }
            ("take", Some("away" | "out" | "off")) => return Some((VerbClass::Removal, i + 2, "remove")),
            _ => {}
        }
        if REMOVAL.contains(&w) {
            return Some((VerbClass::Removal, i + 1, w));
        }
        if ADDITION.contains(&w) {
            return Some((VerbClass::Addition, i + 1, w));
        }
        if LOCAL.contains(&w) {
            return Some((VerbClass::Local, i + 1, w));
        }
    }
    None
}

fn position_after(tokens: &[String], from: usize, words: &[&str]) -> Option<usize> {
    (from..tokens.len()).rev().find(|&k| words.contains(&tokens[k].as_str())).map(|k| k + 1)
}

/// Classify an instruction into an edit type and target phrase.
pub fn classify(text: &str) -> Result<Classification> {
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err(Error::Validation("instruction is empty".into()));
    }
    let verb = find_verb(&tokens);
    let low_confidence = verb.is_none();
    let start = verb.map_or(1.min(tokens.len() - 1), |v| v.1);

    if let Some(bpos) = tokens.iter().position(|w| w == "background" || w == "backdrop") {
        // scene-wide change keyed on the word "background"
        let replacement = position_after(&tokens, bpos + 1, &["to", "into", "with", "by", "as"])
            .map(|k| tail_phrase(&tokens, k))
            .filter(|p| !p.is_empty())
            .or_else(|| {
                let rest = tail_phrase(&tokens, bpos + 1);
                (!rest.is_empty()).then_some(rest)
            });
        return Ok(Classification {
            edit_type: EditType::BackgroundEdit,
            object: "background".into(),
            anchor: None,
            replacement: replacement.map(|p| p.join(" ")),
            low_confidence: low_confidence || matches!(verb, Some((VerbClass::Removal | VerbClass::Addition, ..))),
        });
    }

    let (mut object, end) = noun_phrase(&tokens, start);
    if object.is_empty() {
        // e.g. "zap" alone: fall back to the last content word
        let last = tokens
            .iter()
            .rev()
            .find(|w| !is_stop(w) && !DETERMINERS.contains(&w.as_str()))
            .filter(|w| verb.is_none_or(|v| v.2 != w.as_str()));
        match last {
            Some(w) => object = vec![w.clone()],
            None => return Err(Error::Validation(format!("no object phrase in {text:?}"))),
        }
    }

    let class = verb.map_or(VerbClass::Local, |v| v.0);
    let mut c = Classification {
        edit_type: match class {
            VerbClass::Removal => EditType::Removal,
            VerbClass::Addition => EditType::Addition,
            VerbClass::Local => EditType::LocalEdit,
        },
        object: String::new(),
        anchor: None,
        replacement: None,
        low_confidence,
    };
    match class {
        VerbClass::Removal => {}
        VerbClass::Addition => {
            let mut k = end;
            while k < tokens.len() && !ANCHOR_PREPS.contains(&tokens[k].as_str()) {
                k += 1;
            }
            // skip "next to", "left of", "on top of" and similar
            while k < tokens.len() && (ANCHOR_PREPS.contains(&tokens[k].as_str()) || ["of", "top", "side", "the"].contains(&tokens[k].as_str())) {
                k += 1;
            }
            let (anchor, _) = noun_phrase(&tokens, k);
            if !anchor.is_empty() {
                c.anchor = Some(anchor.join(" "));
            }
        }
        VerbClass::Local => {
            let verb_word = verb.map_or("", |v| v.2);
            let marks: &[&str] = if matches!(verb_word, "replace" | "swap" | "switch") {
                &["with", "by", "for"]
            } else {
                &["to", "into", "as", "with"]
            };
            let repl = position_after(&tokens, end, marks).map(|k| tail_phrase(&tokens, k));
            match repl {
                Some(r) if !r.is_empty() => c.replacement = Some(r.join(" ")),
                _ => {
                    if object.len() > 1 && is_color_word(object.last().expect("non-empty")) {
                        c.replacement = object.pop();
                    }
                }
            }
            if c.replacement.is_none() {
                c.low_confidence = true;
            }
        }
    }
    c.object = object.join(" ");
    Ok(c)
}

fn article(np: &str) -> &'static str {
    match np.chars().next() {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

fn with_article(np: &str) -> String {
    let toks = tokenize(np);
    if toks.first().is_some_and(|w| DETERMINERS.contains(&w.as_str())) {
        np.to_string()
    } else {
        format!("{} {np}", article(np))
    }
}

/// Contiguous match of `needle` inside `hay`, tolerating a plural `s`.
fn find_words(hay: &[String], needle: &[String]) -> Option<usize> {
    if needle.is_empty() || needle.len() > hay.len() {
        return None;
    }
    let same = |a: &str, b: &str| a == b || a.strip_suffix('s') == Some(b) || b.strip_suffix('s') == Some(a);
    (0..=hay.len() - needle.len()).find(|&s| needle.iter().enumerate().all(|(k, w)| same(&hay[s + k], w)))
}

struct Description {
    items: Vec<String>,
    setting: Option<String>,
}

fn split_description(desc: &str) -> Description {
    let desc = desc.trim().trim_end_matches('.');
    let (head, setting) = match desc.rfind(" on ") {
        Some(p) if desc.ends_with("background") => (&desc[..p], Some(desc[p + 4..].to_string())),
        _ => (desc, None),
    };
    let items = head
        .split(", ")
        .flat_map(|s| s.split(" and "))
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect();
    Description { items, setting }
}

fn join_description(d: &Description) -> String {
    match (d.items.is_empty(), &d.setting) {
        (true, Some(s)) => s.clone(),
        (true, None) => "an empty scene".into(),
        (false, Some(s)) => format!("{} on {s}", join_list(&d.items)),
        (false, None) => join_list(&d.items),
    }
}

fn remove_from(d: &mut Description, object: &[String]) {
    let mut kept = Vec::new();
    for item in d.items.drain(..) {
        let toks = tokenize(&item);
        let Some(at) = find_words(&toks, object) else {
            kept.push(item);
            continue;
        };
        let connector = toks[..at].iter().rposition(|w| CONNECTORS.contains(&w.as_str()));
        match connector {
            // the object hangs off another noun: cut the clause
            Some(k) if k > 0 => kept.push(toks[..k].join(" ")),
            _ => {}
        }
    }
    d.items = kept;
}

fn head_noun(np: &str) -> String {
    tokenize(np).pop().unwrap_or_default()
}

/// Target caption for the post-edit image.
pub fn compose(c: &Classification, descriptor: &str) -> Result<String> {
    let object = tokenize(&c.object);
    if object.is_empty() {
        return Err(Error::Validation("target object is empty".into()));
    }
    let mut d = split_description(descriptor);
    match c.edit_type {
        EditType::Removal => remove_from(&mut d, &object),
        EditType::Addition => {
            let np = with_article(&c.object);
            let host = c
                .anchor
                .as_deref()
                .and_then(|a| {
                    let at = tokenize(a);
                    d.items.iter().position(|it| find_words(&tokenize(it), &at).is_some())
                })
                .or((!d.items.is_empty()).then_some(0));
            match host {
                Some(h) if WEARABLES.contains(&head_noun(&c.object).as_str()) => {
                    d.items[h] = format!("{} wearing {np}", d.items[h]);
                }
                _ => d.items.push(np),
            }
        }
        EditType::LocalEdit => {
            if let Some(r) = &c.replacement {
                let rt = tokenize(r);
                let rt: Vec<String> = rt[skip_determiners(&rt, 0)..].to_vec();
                for item in d.items.iter_mut() {
                    let mut toks = tokenize(item);
                    let Some(at) = find_words(&toks, &object) else { continue };
                    if rt.len() == 1 && is_color_word(&rt[0]) {
                        if is_color_word(&toks[at]) {
                            toks[at] = rt[0].clone();
                        } else {
                            toks.insert(at, rt[0].clone());
                        }
                    } else {
                        toks.splice(at..at + object.len(), rt.iter().cloned());
                        if at > 0 && (toks[at - 1] == "a" || toks[at - 1] == "an") {
                            toks[at - 1] = article(&rt[0]).into();
                        }
                    }
                    *item = toks.join(" ");
                }
            }
        }
        EditType::BackgroundEdit => {
            if let Some(r) = &c.replacement {
                let rt = tokenize(r);
                let bare: Vec<String> = rt[skip_determiners(&rt, 0)..].to_vec();
                let setting = if bare.len() == 1 && is_color_word(&bare[0]) {
                    format!("a {} background", bare[0])
                } else if bare.last().is_some_and(|w| w == "background") {
                    with_article(&bare.join(" "))
                } else {
                    format!("{} background", with_article(&bare.join(" ")))
                };
                d.setting = Some(setting);
            }
        }
    }
    let out = join_description(&d);
    if out.trim().is_empty() {
        return Err(Error::Generation("composed caption is empty".into()));
    }
    Ok(out)
}
