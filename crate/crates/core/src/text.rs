//! Whitespace/punctuation tokenizer with byte spans, and the inverse
//! operation that splices replacements back into the original text.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    /// Lowercased surface form.
    pub text: String,
    /// Byte span in the original text.
    pub start: usize,
    pub end: usize,
}

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric()
}

/// Lowercases and splits on whitespace; leading and trailing punctuation
/// characters become tokens of their own, interior punctuation stays.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut push = |start: usize, end: usize| {
        out.push(Token {
            text: text[start..end].to_lowercase(),
            start,
            end,
        })
    };

    let mut chunk_start = None;
    for (i, c) in text.char_indices().chain(std::iter::once((text.len(), ' '))) {
        match (c.is_whitespace(), chunk_start) {
            (false, None) => chunk_start = Some(i),
            (true, Some(s)) => {
                split_chunk(&text[s..i], s, &mut push);
                chunk_start = None;
            }
            _ => {}
        }
    }
    out
}

fn split_chunk(chunk: &str, offset: usize, push: &mut impl FnMut(usize, usize)) {
    let chars: Vec<(usize, char)> = chunk.char_indices().collect();
    let lead = chars.iter().take_while(|(_, c)| is_punct(*c)).count();
    if lead == chars.len() {
        for (i, c) in &chars {
            push(offset + i, offset + i + c.len_utf8());
        }
        return;
    }
    let trail = chars.iter().rev().take_while(|(_, c)| is_punct(*c)).count();
    for (i, c) in &chars[..lead] {
        push(offset + i, offset + i + c.len_utf8());
    }
    let core_start = chars[lead].0;
    let core_end = chars
        .get(chars.len() - trail)
        .map_or(chunk.len(), |(i, _)| *i);
    push(offset + core_start, offset + core_end);
    for (i, c) in &chars[chars.len() - trail..] {
        push(offset + i, offset + i + c.len_utf8());
    }
}

/// Rebuilds text after replacement.
///
/// Runs of untouched tokens keep their original bytes, including the gaps
/// between them. A replaced token is emitted lowercase and separated from
/// its neighbours by exactly one space.
pub fn detokenize(original: &str, tokens: &[Token], replacements: &[Option<String>]) -> Result<String> {
    if tokens.len() != replacements.len() {
        return Err(Error::Config(format!(
            "{} tokens but {} replacement slots",
            tokens.len(),
            replacements.len()
        )));
    }
    let mut prev_end = 0;
    for t in tokens {
        let fits = t.start >= prev_end
            && t.start <= t.end
            && t.end <= original.len()
            && original.is_char_boundary(t.start)
            && original.is_char_boundary(t.end)
            && original[t.start..t.end].to_lowercase() == t.text;
        if !fits {
            return Err(Error::SpanMismatch {
                start: t.start,
                end: t.end,
                len: original.len(),
            });
        }
        prev_end = t.end;
    }
    if tokens.is_empty() {
        return Ok(original.to_owned());
    }

    let mut out = String::with_capacity(original.len());
    if replacements[0].is_none() {
        out.push_str(&original[..tokens[0].start]);
    }
    for (i, (t, rep)) in tokens.iter().zip(replacements).enumerate() {
        if i > 0 {
            if rep.is_none() && replacements[i - 1].is_none() {
                out.push_str(&original[tokens[i - 1].end..t.start]);
            } else {
                out.push(' ');
            }
        }
        match rep {
            Some(r) => out.push_str(&r.to_lowercase()),
            None => out.push_str(&original[t.start..t.end]),
        }
    }
    let last = tokens.len() - 1;
    if replacements[last].is_none() {
        out.push_str(&original[tokens[last].end..]);
    }
    Ok(out)
}
