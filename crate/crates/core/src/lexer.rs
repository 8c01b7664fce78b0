//! Tokenizer shared by the prediction-query parser and the generated-SQL parser.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    /// A double-quoted identifier; never a keyword.
    QuotedIdent(String),
    /// Raw numeric text; `is_float` when it has a fraction or exponent.
    Number { text: String, is_float: bool },
    Str(String),
    Comma,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Dot,
    Star,
    Plus,
    Minus,
    Slash,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Semicolon,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) | Tok::QuotedIdent(s) => write!(f, "identifier '{s}'"),
            Tok::Number { text, .. } => write!(f, "number {text}"),
            Tok::Str(s) => write!(f, "string '{s}'"),
            Tok::Eof => f.write_str("end of input"),
            other => {
                let s = match other {
                    Tok::Comma => ",",
                    Tok::LParen => "(",
                    Tok::RParen => ")",
                    Tok::LBracket => "[",
                    Tok::RBracket => "]",
                    Tok::Dot => ".",
                    Tok::Star => "*",
                    Tok::Plus => "+",
                    Tok::Minus => "-",
                    Tok::Slash => "/",
                    Tok::Eq => "=",
                    Tok::Ne => "<>",
                    Tok::Lt => "<",
                    Tok::Le => "<=",
                    Tok::Gt => ">",
                    Tok::Ge => ">=",
                    Tok::Semicolon => ";",
                    _ => unreachable!(),
                };
                write!(f, "'{s}'")
            }
        }
    }
}

/// 1-based source position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Pos {
    pub line: u32,
    pub col: u32,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub pos: Pos,
}

impl Token {
    pub fn is_keyword(&self, kw: &str) -> bool {
        matches!(&self.tok, Tok::Ident(s) if s.eq_ignore_ascii_case(kw))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LexError {
    pub message: String,
    pub pos: Pos,
}

/// Splits `text` into tokens, always ending with `Tok::Eof`.
pub fn tokenize(text: &str) -> Result<Vec<Token>, LexError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);
    let advance = |chars: &[char], i: &mut usize, line: &mut u32, col: &mut u32| {
        let c = chars[*i];
        *i += 1;
        if c == '\n' {
            *line += 1;
            *col = 1;
        } else {
            *col += 1;
        }
    };
    while i < chars.len() {
        let c = chars[i];
        let pos = Pos { line, col };
        if c.is_whitespace() {
            advance(&chars, &mut i, &mut line, &mut col);
            continue;
        }
        if c == '-' && chars.get(i + 1) == Some(&'-') {
            while i < chars.len() && chars[i] != '\n' {
                advance(&chars, &mut i, &mut line, &mut col);
            }
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                advance(&chars, &mut i, &mut line, &mut col);
            }
            out.push(Token {
                tok: Tok::Ident(chars[start..i].iter().collect()),
                pos,
            });
            continue;
        }
        if c == '"' {
            // Quoted identifier.
            advance(&chars, &mut i, &mut line, &mut col);
            let mut s = String::new();
            loop {
                match chars.get(i) {
                    None => {
                        return Err(LexError {
                            message: "unterminated quoted identifier".into(),
                            pos,
                        })
                    }
                    Some('"') if chars.get(i + 1) == Some(&'"') => {
                        s.push('"');
                        advance(&chars, &mut i, &mut line, &mut col);
                        advance(&chars, &mut i, &mut line, &mut col);
                    }
                    Some('"') => {
                        advance(&chars, &mut i, &mut line, &mut col);
                        break;
                    }
                    Some(&ch) => {
                        s.push(ch);
                        advance(&chars, &mut i, &mut line, &mut col);
                    }
                }
            }
            out.push(Token {
                tok: Tok::QuotedIdent(s),
                pos,
            });
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            let mut is_float = false;
            while i < chars.len() && chars[i].is_ascii_digit() {
                advance(&chars, &mut i, &mut line, &mut col);
            }
            if i < chars.len() && chars[i] == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()) {
                is_float = true;
                advance(&chars, &mut i, &mut line, &mut col);
                while i < chars.len() && chars[i].is_ascii_digit() {
                    advance(&chars, &mut i, &mut line, &mut col);
                }
            } else if i < chars.len()
                && chars[i] == '.'
                && !chars.get(i + 1).is_some_and(|d| d.is_ascii_alphabetic() || *d == '_')
            {
                // Trailing dot as in `1.`
                is_float = true;
                advance(&chars, &mut i, &mut line, &mut col);
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    is_float = true;
                    while i < j {
                        advance(&chars, &mut i, &mut line, &mut col);
                    }
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        advance(&chars, &mut i, &mut line, &mut col);
                    }
                }
            }
            out.push(Token {
                tok: Tok::Number {
                    text: chars[start..i].iter().collect(),
                    is_float,
                },
                pos,
            });
            continue;
        }
        if c == '\'' {
            advance(&chars, &mut i, &mut line, &mut col);
            let mut s = String::new();
            loop {
                match chars.get(i) {
                    None => {
                        return Err(LexError {
                            message: "unterminated string literal".into(),
                            pos,
                        })
                    }
                    Some('\'') if chars.get(i + 1) == Some(&'\'') => {
                        s.push('\'');
                        advance(&chars, &mut i, &mut line, &mut col);
                        advance(&chars, &mut i, &mut line, &mut col);
                    }
                    Some('\'') => {
                        advance(&chars, &mut i, &mut line, &mut col);
                        break;
                    }
                    Some(&ch) => {
                        s.push(ch);
                        advance(&chars, &mut i, &mut line, &mut col);
                    }
                }
            }
            out.push(Token {
                tok: Tok::Str(s),
                pos,
            });
            continue;
        }
        let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
        let (tok, len) = match two.as_str() {
            "<=" => (Tok::Le, 2),
            ">=" => (Tok::Ge, 2),
            "<>" | "!=" => (Tok::Ne, 2),
            "==" => (Tok::Eq, 2),
            _ => match c {
                ',' => (Tok::Comma, 1),
                '(' => (Tok::LParen, 1),
                ')' => (Tok::RParen, 1),
                '[' => (Tok::LBracket, 1),
                ']' => (Tok::RBracket, 1),
                '.' => (Tok::Dot, 1),
                '*' => (Tok::Star, 1),
                '+' => (Tok::Plus, 1),
                '-' => (Tok::Minus, 1),
                '/' => (Tok::Slash, 1),
                '=' => (Tok::Eq, 1),
                '<' => (Tok::Lt, 1),
                '>' => (Tok::Gt, 1),
                ';' => (Tok::Semicolon, 1),
                other => {
                    return Err(LexError {
                        message: format!("unexpected character '{other}'"),
                        pos,
                    })
                }
            },
        };
        for _ in 0..len {
            advance(&chars, &mut i, &mut line, &mut col);
        }
        out.push(Token { tok, pos });
    }
    out.push(Token {
        tok: Tok::Eof,
        pos: Pos { line, col },
    });
    Ok(out)
}

/// Cursor over a token list that never runs past `Eof`.
pub struct Cursor {
    toks: Vec<Token>,
    at: usize,
}

impl Cursor {
    pub fn new(toks: Vec<Token>) -> Self {
        debug_assert!(matches!(toks.last(), Some(Token { tok: Tok::Eof, .. })));
        Cursor { toks, at: 0 }
    }

    pub fn peek(&self) -> &Token {
        &self.toks[self.at.min(self.toks.len() - 1)]
    }

    pub fn peek_at(&self, k: usize) -> &Token {
        &self.toks[(self.at + k).min(self.toks.len() - 1)]
    }

    pub fn next(&mut self) -> Token {
        let t = self.peek().clone();
        if self.at < self.toks.len() - 1 {
            self.at += 1;
        }
        t
    }

    pub fn eat(&mut self, tok: &Tok) -> bool {
        if &self.peek().tok == tok {
            self.next();
            true
        } else {
            false
        }
    }

    pub fn eat_keyword(&mut self, kw: &str) -> bool {
        if self.peek().is_keyword(kw) {
            self.next();
            true
        } else {
            false
        }
    }
}
