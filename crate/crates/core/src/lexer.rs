//! Lexical analysis for Java source.
//!
//! Tokens are classified with a JavaLang-style taxonomy: identifiers,
//! separators, operators, keywords, modifiers, basic types and literals.
//! Only lexical classification is performed; there is no parser.

use std::fmt;
use std::io::{self, Write};
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Syntactic class of a lexed token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenType {
    Identifier,
    Separator,
    Operator,
    Keyword,
    Modifier,
    BasicType,
    DecimalInteger,
    StringLiteral,
    CharLiteral,
    FloatLiteral,
    BooleanLiteral,
    NullLiteral,
    Annotation,
    Other,
}

impl TokenType {
    pub const ALL: [TokenType; 14] = [
        TokenType::Identifier,
        TokenType::Separator,
        TokenType::Operator,
        TokenType::Keyword,
        TokenType::Modifier,
        TokenType::BasicType,
        TokenType::DecimalInteger,
        TokenType::StringLiteral,
        TokenType::CharLiteral,
        TokenType::FloatLiteral,
        TokenType::BooleanLiteral,
        TokenType::NullLiteral,
        TokenType::Annotation,
        TokenType::Other,
    ];

    /// The seven types scored by the syntactic probe.
    pub const PROBED: [TokenType; 7] = [
        TokenType::BasicType,
        TokenType::DecimalInteger,
        TokenType::Identifier,
        TokenType::Keyword,
        TokenType::Modifier,
        TokenType::Operator,
        TokenType::Separator,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TokenType::Identifier => "identifier",
            TokenType::Separator => "separator",
            TokenType::Operator => "operator",
            TokenType::Keyword => "keyword",
            TokenType::Modifier => "modifier",
            TokenType::BasicType => "basic-type",
            TokenType::DecimalInteger => "decimal-integer",
            TokenType::StringLiteral => "string-literal",
            TokenType::CharLiteral => "char-literal",
            TokenType::FloatLiteral => "float-literal",
            TokenType::BooleanLiteral => "boolean-literal",
            TokenType::NullLiteral => "null-literal",
            TokenType::Annotation => "annotation",
            TokenType::Other => "other",
        }
    }

    /// Short class label used by the construct analyses (`IDF`, `SEPS`, ...).
    ///
    /// Decimal integers and literals have no construct label.
    pub fn construct_label(self) -> Option<&'static str> {
        match self {
            TokenType::Identifier => Some("IDF"),
            TokenType::Separator => Some("SEPS"),
            TokenType::Operator => Some("OP"),
            TokenType::BasicType => Some("DTP"),
            TokenType::Keyword => Some("KEY"),
            TokenType::Modifier => Some("MOD"),
            _ => None,
        }
    }
}

impl fmt::Display for TokenType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TokenType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TokenType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown token type `{s}`")))
    }
}

/// A lexed token. `span` is a half-open byte range into the lexed source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub kind: TokenType,
    pub line: usize,
    pub column: usize,
    pub span: Range<usize>,
}

/// Which reserved words count as modifiers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum ModifierSet {
    /// public, private, protected, static, final, abstract, synchronized,
    /// volatile, transient, native, strictfp.
    #[default]
    Full,
    /// Access modifiers only: public, private, protected and `default`.
    /// Every other modifier word is classified as a keyword.
    AccessOnly,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LexOptions {
    pub modifiers: ModifierSet,
}

pub const FULL_MODIFIERS: &[&str] = &[
    "public",
    "private",
    "protected",
    "static",
    "final",
    "abstract",
    "synchronized",
    "volatile",
    "transient",
    "native",
    "strictfp",
];

pub const ACCESS_MODIFIERS: &[&str] = &["public", "private", "protected", "default"];

pub const BASIC_TYPES: &[&str] = &[
    "byte", "short", "int", "long", "float", "double", "char", "boolean",
];

/// Every reserved word of the language, including the unused `const` and `goto`.
pub const RESERVED_WORDS: &[&str] = &[
    "abstract",
    "assert",
    "boolean",
    "break",
    "byte",
    "case",
    "catch",
    "char",
    "class",
    "const",
    "continue",
    "default",
    "do",
    "double",
    "else",
    "enum",
    "extends",
    "final",
    "finally",
    "float",
    "for",
    "goto",
    "if",
    "implements",
    "import",
    "instanceof",
    "int",
    "interface",
    "long",
    "native",
    "new",
    "package",
    "private",
    "protected",
    "public",
    "return",
    "short",
    "static",
    "strictfp",
    "super",
    "switch",
    "synchronized",
    "this",
    "throw",
    "throws",
    "transient",
    "try",
    "void",
    "volatile",
    "while",
];

pub const SEPARATORS: &[&str] = &["...", "::", "(", ")", "{", "}", "[", "]", ";", ",", "."];

/// Operators, longest first so that greedy matching picks `>>>=` over `>`.
pub const OPERATORS: &[&str] = &[
    ">>>=", "<<=", ">>=", ">>>", "->", "++", "--", "&&", "||", "==", "!=", "<=", ">=", "+=", "-=",
    "*=", "/=", "&=", "|=", "^=", "%=", "<<", ">>", "=", ">", "<", "!", "~", "?", ":", "+", "-",
    "*", "/", "&", "|", "^", "%",
];

/// Classifies an identifier-shaped word against the reserved-word tables.
pub fn classify_word(word: &str, options: LexOptions) -> TokenType {
    match word {
        "true" | "false" => return TokenType::BooleanLiteral,
        "null" => return TokenType::NullLiteral,
        _ => {}
    }
    if BASIC_TYPES.contains(&word) {
        return TokenType::BasicType;
    }
    let modifiers = match options.modifiers {
        ModifierSet::Full => FULL_MODIFIERS,
        ModifierSet::AccessOnly => ACCESS_MODIFIERS,
    };
    if modifiers.contains(&word) {
        TokenType::Modifier
    } else if RESERVED_WORDS.contains(&word) {
        TokenType::Keyword
    } else {
        TokenType::Identifier
    }
}

/// Removes `//`, `/* */` and `/** */` comments. Literal contents are left alone.
pub fn strip_comments(source: &str) -> Result<String> {
    let bytes = source.as_bytes();
    let mut out = String::with_capacity(source.len());
    let mut i = 0;
    let mut copied = 0;
    let mut pos = Position::default();

    while i < bytes.len() {
        match bytes[i] {
            b'/' if bytes.get(i + 1) == Some(&b'/') => {
                out.push_str(&source[copied..i]);
                let end = source[i..].find('\n').map_or(bytes.len(), |n| i + n);
                pos.advance(&source[i..end]);
                i = end;
                copied = end;
            }
            b'/' if bytes.get(i + 1) == Some(&b'*') => {
                out.push_str(&source[copied..i]);
                let start = pos;
                let end = source[i + 2..]
                    .find("*/")
                    .map(|n| i + 2 + n + 2)
                    .ok_or_else(|| start.error("unterminated block comment"))?;
                pos.advance(&source[i..end]);
                i = end;
                copied = end;
            }
            b'"' | b'\'' => {
                let end = skip_literal(source, i);
                pos.advance(&source[i..end]);
                i = end;
            }
            _ => {
                let ch = source[i..].chars().next().expect("in bounds");
                pos.step(ch);
                i += ch.len_utf8();
            }
        }
    }
    out.push_str(&source[copied..]);
    Ok(out)
}

/// Byte offset just past the string, text block or char literal starting at
/// `start`. Unterminated literals run to the end of the line.
fn skip_literal(source: &str, start: usize) -> usize {
    let bytes = source.as_bytes();
    if source[start..].starts_with("\"\"\"") {
        let mut i = start + 3;
        while i < bytes.len() {
            if bytes[i] == b'\\' {
                i += 2;
            } else if source[i..].starts_with("\"\"\"") {
                return i + 3;
            } else {
                i += 1;
            }
        }
        return bytes.len();
    }
    let quote = bytes[start];
    let mut i = start + 1;
    while i < bytes.len() {
        match bytes[i] {
            b'\\' => i += 2,
            b'\n' => return i,
            b if b == quote => return i + 1,
            _ => i += 1,
        }
    }
    bytes.len().min(i)
}

#[derive(Debug, Clone, Copy)]
struct Position {
    line: usize,
    column: usize,
}

impl Default for Position {
    fn default() -> Self {
        Position { line: 1, column: 1 }
    }
}

impl Position {
    fn step(&mut self, ch: char) {
        if ch == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
    }

    fn advance(&mut self, text: &str) {
        text.chars().for_each(|c| self.step(c));
    }

    fn error(self, message: impl Into<String>) -> Error {
        Error::Lex {
            line: self.line,
            column: self.column,
            message: message.into(),
        }
    }
}

/// Lexes with the default (full) modifier set.
pub fn lex(source: &str) -> Result<Vec<Token>> {
    lex_with(source, LexOptions::default())
}

/// Lexes `source` into an ordered token list. Comments are skipped.
pub fn lex_with(source: &str, options: LexOptions) -> Result<Vec<Token>> {
    Lexer {
        source,
        offset: 0,
        pos: Position::default(),
        options,
    }
    .run()
}

struct Lexer<'a> {
    source: &'a str,
    offset: usize,
    pos: Position,
    options: LexOptions,
}

impl<'a> Lexer<'a> {
    fn rest(&self) -> &'a str {
        &self.source[self.offset..]
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn peek_nth(&self, n: usize) -> Option<char> {
        self.rest().chars().nth(n)
    }

    fn bump(&mut self, bytes: usize) {
        let text = &self.source[self.offset..self.offset + bytes];
        self.pos.advance(text);
        self.offset += bytes;
    }

    fn run(mut self) -> Result<Vec<Token>> {
        let mut tokens = Vec::new();
        while let Some(ch) = self.peek() {
            if ch.is_whitespace() {
                self.bump(ch.len_utf8());
                continue;
            }
            let rest = self.rest();
            if rest.starts_with("//") {
                let len = rest.find('\n').unwrap_or(rest.len());
                self.bump(len);
                continue;
            }
            if rest.starts_with("/*") {
                let start = self.pos;
                let len = rest[2..]
                    .find("*/")
                    .map(|n| n + 4)
                    .ok_or_else(|| start.error("unterminated block comment"))?;
                self.bump(len);
                continue;
            }
            let start = self.pos;
            let begin = self.offset;
            let (len, kind) = self.scan(ch)?;
            let span = begin..begin + len;
            tokens.push(Token {
                text: self.source[span.clone()].to_string(),
                kind,
                line: start.line,
                column: start.column,
                span,
            });
            self.bump(len);
        }
        Ok(tokens)
    }

    fn scan(&self, ch: char) -> Result<(usize, TokenType)> {
        let rest = self.rest();
        if ch == '"' || ch == '\'' {
            return self.scan_literal(ch);
        }
        if ch.is_ascii_digit() || (ch == '.' && self.peek_nth(1).is_some_and(|c| c.is_ascii_digit()))
        {
            return Ok(scan_number(rest));
        }
        if is_ident_start(rest) {
            let len = ident_len(rest);
            return Ok((len, classify_word(&rest[..len], self.options)));
        }
        if ch == '@' {
            let after = &rest[1..];
            if is_ident_start(after) {
                let mut len = 1 + ident_len(after);
                // qualified annotation names: @a.b.C
                while rest[len..].starts_with('.') && is_ident_start(&rest[len + 1..]) {
                    len += 1 + ident_len(&rest[len + 1..]);
                }
                return Ok((len, TokenType::Annotation));
            }
            return Ok((1, TokenType::Other));
        }
        if let Some(sep) = SEPARATORS.iter().find(|s| rest.starts_with(**s)) {
            return Ok((sep.len(), TokenType::Separator));
        }
        if let Some(op) = OPERATORS.iter().find(|o| rest.starts_with(**o)) {
            return Ok((op.len(), TokenType::Operator));
        }
        Err(self.pos.error(format!("illegal character {ch:?}")))
    }

    fn scan_literal(&self, quote: char) -> Result<(usize, TokenType)> {
        let rest = self.rest();
        let end = skip_literal(self.source, self.offset) - self.offset;
        let text = &rest[..end];
        let terminated = if text.starts_with("\"\"\"") {
            text.len() >= 6 && text.ends_with("\"\"\"")
        } else {
            text.len() >= 2 && text.ends_with(quote) && !ends_with_escape(&text[1..text.len() - 1])
        };
        if !terminated {
            let what = if quote == '"' { "string" } else { "char" };
            return Err(self.pos.error(format!("unterminated {what} literal")));
        }
        let kind = if quote == '"' {
            TokenType::StringLiteral
        } else {
            TokenType::CharLiteral
        };
        Ok((end, kind))
    }
}

fn ends_with_escape(body: &str) -> bool {
    body.bytes().rev().take_while(|&b| b == b'\\').count() % 2 == 1
}

fn is_ident_start(s: &str) -> bool {
    match s.chars().next() {
        Some(c) if c.is_alphabetic() || c == '_' || c == '$' => true,
        Some('\\') => is_unicode_escape(s),
        _ => false,
    }
}

fn is_unicode_escape(s: &str) -> bool {
    let b = s.as_bytes();
    if b.len() < 2 || b[0] != b'\\' || b[1] != b'u' {
        return false;
    }
    let mut i = 1;
    while b.get(i) == Some(&b'u') {
        i += 1;
    }
    b.len() >= i + 4 && b[i..i + 4].iter().all(u8::is_ascii_hexdigit)
}

/// Length in bytes of the identifier at the start of `s`. Unicode escapes are
/// kept verbatim as part of the identifier.
fn ident_len(s: &str) -> usize {
    let mut len = 0;
    while len < s.len() {
        let rest = &s[len..];
        if is_unicode_escape(rest) {
            let us = rest[1..].bytes().take_while(|&b| b == b'u').count();
            len += 1 + us + 4;
            continue;
        }
        match rest.chars().next() {
            Some(c) if c.is_alphanumeric() || c == '_' || c == '$' => len += c.len_utf8(),
            _ => break,
        }
    }
    len
}

fn scan_number(s: &str) -> (usize, TokenType) {
    let b = s.as_bytes();
    let digits = |from: usize, pred: fn(u8) -> bool| {
        from + b[from..]
            .iter()
            .take_while(|&&c| pred(c) || c == b'_')
            .count()
    };
    let has_suffix = |i: usize, set: &[u8]| b.get(i).is_some_and(|c| set.contains(c));

    if b.len() > 1 && b[0] == b'0' && matches!(b[1], b'x' | b'X') {
        let mut i = digits(2, |c| c.is_ascii_hexdigit());
        let mut float = false;
        if b.get(i) == Some(&b'.') {
            i = digits(i + 1, |c| c.is_ascii_hexdigit());
            float = true;
        }
        if has_suffix(i, b"pP") {
            i += 1;
            if has_suffix(i, b"+-") {
                i += 1;
            }
            i = digits(i, |c| c.is_ascii_digit());
            float = true;
        }
        if float {
            if has_suffix(i, b"fFdD") {
                i += 1;
            }
            return (i, TokenType::FloatLiteral);
        }
        if has_suffix(i, b"lL") {
            i += 1;
        }
        return (i, TokenType::Other);
    }
    if b.len() > 1 && b[0] == b'0' && matches!(b[1], b'b' | b'B') {
        let mut i = digits(2, |c| c == b'0' || c == b'1');
        if has_suffix(i, b"lL") {
            i += 1;
        }
        return (i, TokenType::Other);
    }

    let mut i = digits(0, |c| c.is_ascii_digit());
    let mut float = false;
    if b.get(i) == Some(&b'.') {
        let next = b.get(i + 1).copied();
        let fraction = next.is_some_and(|c| c.is_ascii_digit());
        let bare = !next.is_some_and(|c| c == b'.' || c.is_ascii_alphabetic() || c == b'_');
        if fraction || (bare && i > 0) {
            i = digits(i + 1, |c| c.is_ascii_digit());
            float = true;
        }
    }
    if has_suffix(i, b"eE") {
        let mut j = i + 1;
        if has_suffix(j, b"+-") {
            j += 1;
        }
        if b.get(j).is_some_and(u8::is_ascii_digit) {
            i = digits(j, |c| c.is_ascii_digit());
            float = true;
        }
    }
    if has_suffix(i, b"fFdD") {
        return (i + 1, TokenType::FloatLiteral);
    }
    if float {
        return (i, TokenType::FloatLiteral);
    }
    let octal = i > 1 && b[0] == b'0';
    if has_suffix(i, b"lL") {
        i += 1;
    }
    if octal {
        (i, TokenType::Other)
    } else {
        (i, TokenType::DecimalInteger)
    }
}

/// Groups tokens by the physical line they start on. Lines without tokens
/// are dropped.
pub fn split_sentences(source: &str) -> Result<Vec<Vec<Token>>> {
    Ok(group_by_line(lex(source)?))
}

pub fn group_by_line(tokens: Vec<Token>) -> Vec<Vec<Token>> {
    let mut sentences: Vec<Vec<Token>> = Vec::new();
    let mut current_line = 0;
    for token in tokens {
        if sentences.is_empty() || token.line != current_line {
            current_line = token.line;
            sentences.push(Vec::new());
        }
        sentences.last_mut().expect("pushed above").push(token);
    }
    sentences
}

/// Writes the token dump CSV: `line,column,type,text`.
pub fn write_token_csv<W: Write>(mut out: W, tokens: &[Token]) -> io::Result<()> {
    writeln!(out, "line,column,type,text")?;
    for t in tokens {
        writeln!(
            out,
            "{},{},{},{}",
            t.line,
            t.column,
            t.kind,
            crate::csv::quote(&t.text)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(src: &str) -> Vec<TokenType> {
        lex(src).unwrap().into_iter().map(|t| t.kind).collect()
    }

    #[test]
    fn strips_line_comment() {
        assert_eq!(strip_comments("int a; // c").unwrap(), "int a; ");
    }

    #[test]
    fn comment_markers_inside_strings_survive() {
        let src = "String s = \"// not a comment\";";
        assert_eq!(strip_comments(src).unwrap(), src);
        let src = "char c = '/'; String t = \"/* x */\";";
        assert_eq!(strip_comments(src).unwrap(), src);
    }

    #[test]
    fn strips_doc_comment() {
        assert_eq!(strip_comments("/** doc */ void f(){}").unwrap(), " void f(){}");
    }

    #[test]
    fn unterminated_block_comment_reports_position() {
        match strip_comments("int a;\n  /* open") {
            Err(Error::Lex { line, column, .. }) => assert_eq!((line, column), (2, 3)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn classifies_paper_examples() {
        use TokenType::*;
        assert_eq!(
            kinds("public int x = 1 ;"),
            vec![Modifier, BasicType, Identifier, Operator, DecimalInteger, Separator]
        );
        assert_eq!(kinds("continue ;"), vec![Keyword, Separator]);
        assert!(kinds("").is_empty());
    }

    #[test]
    fn numeric_literal_kinds() {
        use TokenType::*;
        assert_eq!(kinds("0"), vec![DecimalInteger]);
        assert_eq!(kinds("1_000L"), vec![DecimalInteger]);
        assert_eq!(kinds("0x1F"), vec![Other]);
        assert_eq!(kinds("0b101"), vec![Other]);
        assert_eq!(kinds("017"), vec![Other]);
        assert_eq!(kinds("1.5"), vec![FloatLiteral]);
        assert_eq!(kinds(".5f"), vec![FloatLiteral]);
        assert_eq!(kinds("1e10"), vec![FloatLiteral]);
        assert_eq!(kinds("2d"), vec![FloatLiteral]);
        assert_eq!(kinds("x.length"), vec![Identifier, Separator, Identifier]);
    }

    #[test]
    fn illegal_character_is_an_error() {
        match lex("int # x;") {
            Err(Error::Lex { line, column, .. }) => assert_eq!((line, column), (1, 5)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unterminated_string_is_an_error() {
        assert!(lex("String s = \"abc;\nint x;").is_err());
    }

    #[test]
    fn annotations_and_unicode_escapes() {
        let toks = lex("@Override void f\\u0041() {}").unwrap();
        assert_eq!(toks[0].kind, TokenType::Annotation);
        assert_eq!(toks[0].text, "@Override");
        assert_eq!(toks[2].text, "f\\u0041");
        assert_eq!(toks[2].kind, TokenType::Identifier);
    }

    #[test]
    fn access_only_modifier_set() {
        let opts = LexOptions {
            modifiers: ModifierSet::AccessOnly,
        };
        let toks = lex_with("private static final int x;", opts).unwrap();
        let k: Vec<_> = toks.iter().map(|t| t.kind).collect();
        use TokenType::*;
        assert_eq!(k, vec![Modifier, Keyword, Keyword, BasicType, Identifier, Separator]);
    }

    #[test]
    fn word_tables_are_disjoint_from_keywords() {
        for word in RESERVED_WORDS {
            let kind = classify_word(word, LexOptions::default());
            if FULL_MODIFIERS.contains(word) {
                assert_eq!(kind, TokenType::Modifier, "{word}");
            } else if BASIC_TYPES.contains(word) {
                assert_eq!(kind, TokenType::BasicType, "{word}");
            } else {
                assert_eq!(kind, TokenType::Keyword, "{word}");
            }
        }
        assert!(FULL_MODIFIERS.iter().all(|m| !BASIC_TYPES.contains(m)));
    }

    #[test]
    fn sentences_follow_lines() {
        assert_eq!(split_sentences("void f() {\n}").unwrap().len(), 2);
        let one = split_sentences("int a = 0;").unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].len(), 5);
        assert!(split_sentences("  \n\n \t\n").unwrap().is_empty());
        assert_eq!(split_sentences("a;\n\n\nb;").unwrap().len(), 2);
    }

    #[test]
    fn token_csv_escapes_quotes() {
        let toks = lex("s = \"a\\\"b\";").unwrap();
        let mut buf = Vec::new();
        write_token_csv(&mut buf, &toks).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("line,column,type,text\n"));
        assert!(text.contains("1,5,string-literal,\"\"\"a\\\"\"b\"\"\"\n"), "{text}");
    }

    #[test]
    fn text_blocks_lex_as_one_string() {
        let src = "String s = \"\"\"\n  hi \"there\"\n  \"\"\";";
        let toks = lex(src).unwrap();
        assert_eq!(toks[3].kind, TokenType::StringLiteral);
        assert_eq!(toks.len(), 5);
    }
}
