use super::{Pos, SmqlError};

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Num(f64),
    Str(String),
    Ident(String),
    Let,
    If,
    Then,
    Else,
    And,
    Or,
    Not,
    True,
    False,
    Nil,
    Plus,
    Minus,
    Star,
    Slash,
    Lt,
    Le,
    Gt,
    Ge,
    EqEq,
    Ne,
    Assign,
    Semi,
    Comma,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Pipe,
    Eof,
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Num(n) => format!("number {n}"),
            Tok::Str(_) => "string".into(),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Eof => "end of input".into(),
            other => format!("`{}`", other.symbol()),
        }
    }

    pub fn symbol(&self) -> &'static str {
        match self {
            Tok::Let => "let",
            Tok::If => "if",
            Tok::Then => "then",
            Tok::Else => "else",
            Tok::And => "and",
            Tok::Or => "or",
            Tok::Not => "not",
            Tok::True => "true",
            Tok::False => "false",
            Tok::Nil => "nil",
            Tok::Plus => "+",
            Tok::Minus => "-",
            Tok::Star => "*",
            Tok::Slash => "/",
            Tok::Lt => "<",
            Tok::Le => "<=",
            Tok::Gt => ">",
            Tok::Ge => ">=",
            Tok::EqEq => "==",
            Tok::Ne => "!=",
            Tok::Assign => "=",
            Tok::Semi => ";",
            Tok::Comma => ",",
            Tok::LParen => "(",
            Tok::RParen => ")",
            Tok::LBracket => "[",
            Tok::RBracket => "]",
            Tok::Pipe => "|",
            Tok::Num(_) | Tok::Str(_) | Tok::Ident(_) | Tok::Eof => "",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub pos: Pos,
}

struct Cursor<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: u32,
    column: u32,
}

impl Cursor<'_> {
    fn pos(&self) -> Pos {
        Pos {
            line: self.line,
            column: self.column,
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.chars.peek().copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(c)
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.bump();
            true
        } else {
            false
        }
    }
}

pub fn tokenize(source: &str) -> Result<Vec<Token>, SmqlError> {
    let mut cur = Cursor {
        chars: source.chars().peekable(),
        line: 1,
        column: 1,
    };
    let mut out = Vec::new();
    loop {
        while let Some(c) = cur.peek() {
            if c.is_whitespace() {
                cur.bump();
            } else if c == '#' {
                while cur.peek().is_some_and(|c| c != '\n') {
                    cur.bump();
                }
            } else {
                break;
            }
        }
        let pos = cur.pos();
        let Some(c) = cur.bump() else {
            out.push(Token { tok: Tok::Eof, pos });
            return Ok(out);
        };
        let tok = match c {
            '+' => Tok::Plus,
            '-' => Tok::Minus,
            '*' => Tok::Star,
            '/' => Tok::Slash,
            ';' => Tok::Semi,
            ',' => Tok::Comma,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '[' => Tok::LBracket,
            ']' => Tok::RBracket,
            '|' => Tok::Pipe,
            '<' => {
                if cur.eat('=') {
                    Tok::Le
                } else {
                    Tok::Lt
                }
            }
            '>' => {
                if cur.eat('=') {
                    Tok::Ge
                } else {
                    Tok::Gt
                }
            }
            '=' => {
                if cur.eat('=') {
                    Tok::EqEq
                } else {
                    Tok::Assign
                }
            }
            '!' => {
                if cur.eat('=') {
                    Tok::Ne
                } else {
                    return Err(SmqlError::syntax(pos, "unexpected `!`", vec!["`!=`".into()]));
                }
            }
            '"' => Tok::Str(string_literal(&mut cur, pos)?),
            c if c.is_ascii_digit() => Tok::Num(number_literal(&mut cur, c, pos)?),
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut s = String::from(c);
                while let Some(c) = cur.peek().filter(|c| c.is_ascii_alphanumeric() || *c == '_') {
                    s.push(c);
                    cur.bump();
                }
                keyword(&s).unwrap_or(Tok::Ident(s))
            }
            other => return Err(SmqlError::syntax(pos, format!("unexpected character {other:?}"), vec![])),
        };
        out.push(Token { tok, pos });
    }
}

fn keyword(s: &str) -> Option<Tok> {
    Some(match s {
        "let" => Tok::Let,
        "if" => Tok::If,
        "then" => Tok::Then,
        "else" => Tok::Else,
        "and" => Tok::And,
        "or" => Tok::Or,
        "not" => Tok::Not,
        "true" => Tok::True,
        "false" => Tok::False,
        "nil" => Tok::Nil,
        _ => return None,
    })
}

pub fn is_keyword(s: &str) -> bool {
    keyword(s).is_some()
}

fn string_literal(cur: &mut Cursor<'_>, start: Pos) -> Result<String, SmqlError> {
    let mut s = String::new();
    loop {
        let pos = cur.pos();
        match cur.bump() {
            None => return Err(SmqlError::syntax(start, "unterminated string", vec!["`\"`".into()])),
            Some('"') => return Ok(s),
            Some('\\') => match cur.bump() {
                Some('"') => s.push('"'),
                Some('\\') => s.push('\\'),
                Some('n') => s.push('\n'),
                Some('t') => s.push('\t'),
                _ => return Err(SmqlError::syntax(pos, "bad escape", vec![r#"one of \" \\ \n \t"#.into()])),
            },
            Some(c) => s.push(c),
        }
    }
}

fn number_literal(cur: &mut Cursor<'_>, first: char, pos: Pos) -> Result<f64, SmqlError> {
    let mut s = String::from(first);
    let digits = |cur: &mut Cursor<'_>, s: &mut String| {
        let mut any = false;
        while let Some(c) = cur.peek().filter(char::is_ascii_digit) {
            s.push(c);
            cur.bump();
            any = true;
        }
        any
    };
    digits(cur, &mut s);
    if cur.eat('.') {
        s.push('.');
        if !digits(cur, &mut s) {
            return Err(SmqlError::syntax(cur.pos(), "digits expected after `.`", vec!["digit".into()]));
        }
    }
    if matches!(cur.peek(), Some('e' | 'E')) {
        cur.bump();
        s.push('e');
        if let Some(sign) = cur.peek().filter(|c| *c == '+' || *c == '-') {
            s.push(sign);
            cur.bump();
        }
        if !digits(cur, &mut s) {
            return Err(SmqlError::syntax(cur.pos(), "exponent digits expected", vec!["digit".into()]));
        }
    }
    let n: f64 = s.parse().map_err(|_| SmqlError::syntax(pos, "bad number", vec![]))?;
    if !n.is_finite() {
        return Err(SmqlError::syntax(pos, "number literal out of range", vec![]));
    }
    Ok(n)
}
