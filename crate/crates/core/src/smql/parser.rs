use std::collections::BTreeSet;
use std::sync::Arc;

use super::ast::{BinOp, Expr, ExprKind, Program, Stmt, UnOp};
use super::lexer::{tokenize, Tok, Token};
use super::{Pos, SmqlError};

pub const MAX_PARSE_DEPTH: usize = 96;

const PREFIX_BP: u8 = 6;
const POSTFIX_BP: u8 = 7;

pub fn parse(source: &str) -> Result<Program, SmqlError> {
    let tokens = tokenize(source)?;
    let mut p = Parser {
        tokens,
        at: 0,
        depth: 0,
    };
    let mut stmts = Vec::new();
    let mut bound = BTreeSet::new();
    while p.peek() != &Tok::Eof {
        if p.peek() == &Tok::Let {
            p.bump();
            let pos = p.pos();
            let name = p.ident()?;
            if !bound.insert(name.clone()) {
                return Err(SmqlError::syntax(pos, format!("`{name}` is already bound"), vec![]));
            }
            p.expect(Tok::Assign)?;
            let e = p.expr(0)?;
            p.expect(Tok::Semi)?;
            stmts.push(Stmt::Let(name, e));
        } else {
            let e = p.expr(0)?;
            p.expect(Tok::Semi)?;
            stmts.push(Stmt::Expr(e));
        }
    }
    Ok(Program { stmts })
}

/// Parses a single expression with no trailing `;`.
pub fn parse_expr(source: &str) -> Result<Expr, SmqlError> {
    let mut p = Parser {
        tokens: tokenize(source)?,
        at: 0,
        depth: 0,
    };
    let e = p.expr(0)?;
    p.expect(Tok::Eof)?;
    Ok(e)
}

struct Parser {
    tokens: Vec<Token>,
    at: usize,
    depth: usize,
}

fn infix(tok: &Tok) -> Option<(BinOp, u8)> {
    Some(match tok {
        Tok::Or => (BinOp::Or, 1),
        Tok::And => (BinOp::And, 2),
        Tok::EqEq => (BinOp::Eq, 3),
        Tok::Ne => (BinOp::Ne, 3),
        Tok::Lt => (BinOp::Lt, 3),
        Tok::Le => (BinOp::Le, 3),
        Tok::Gt => (BinOp::Gt, 3),
        Tok::Ge => (BinOp::Ge, 3),
        Tok::Plus => (BinOp::Add, 4),
        Tok::Minus => (BinOp::Sub, 4),
        Tok::Star => (BinOp::Mul, 5),
        Tok::Slash => (BinOp::Div, 5),
        _ => return None,
    })
}

const EXPR_START: [&str; 4] = ["expression", "`(`", "`[`", "`|`"];

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.at].tok
    }

    fn pos(&self) -> Pos {
        self.tokens[self.at].pos
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.at].clone();
        if t.tok != Tok::Eof {
            self.at += 1;
        }
        t
    }

    fn unexpected(&self, expected: Vec<String>) -> SmqlError {
        SmqlError::syntax(self.pos(), format!("unexpected {}", self.peek().describe()), expected)
    }

    fn expect(&mut self, tok: Tok) -> Result<(), SmqlError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            let want = if tok == Tok::Eof { "end of input".to_string() } else { format!("`{}`", tok.symbol()) };
            Err(self.unexpected(vec![want]))
        }
    }

    fn ident(&mut self) -> Result<String, SmqlError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            _ => Err(self.unexpected(vec!["identifier".into()])),
        }
    }

    fn expr(&mut self, min_bp: u8) -> Result<Expr, SmqlError> {
        self.depth += 1;
        if self.depth > MAX_PARSE_DEPTH {
            return Err(SmqlError::syntax(self.pos(), "expression nested too deeply", vec![]));
        }
        let r = self.expr_inner(min_bp);
        self.depth -= 1;
        r
    }

    fn deepen(&mut self, wraps: &mut usize) -> Result<(), SmqlError> {
        *wraps += 1;
        self.depth += 1;
        if self.depth > MAX_PARSE_DEPTH {
            return Err(SmqlError::syntax(self.pos(), "expression nested too deeply", vec![]));
        }
        Ok(())
    }

    fn expr_inner(&mut self, min_bp: u8) -> Result<Expr, SmqlError> {
        let mut lhs = self.prefix()?;
        // Left-nested chains deepen the tree too; count each wrap.
        let mut wraps = 0;
        let r = loop {
            let pos = self.pos();
            match self.peek() {
                Tok::LBracket if POSTFIX_BP >= min_bp => {
                    if let Err(e) = self.deepen(&mut wraps) {
                        break Err(e);
                    }
                    self.bump();
                    let idx = match self.expr(0) {
                        Ok(i) => i,
                        Err(e) => break Err(e),
                    };
                    if let Err(e) = self.expect(Tok::RBracket) {
                        break Err(e);
                    }
                    lhs = Expr::new(ExprKind::Index(Box::new(lhs), Box::new(idx)), pos);
                }
                tok => {
                    let Some((op, bp)) = infix(tok) else { break Ok(lhs) };
                    if bp < min_bp {
                        break Ok(lhs);
                    }
                    if let Err(e) = self.deepen(&mut wraps) {
                        break Err(e);
                    }
                    self.bump();
                    let rhs = match self.expr(bp + 1) {
                        Ok(r) => r,
                        Err(e) => break Err(e),
                    };
                    lhs = Expr::new(ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)), pos);
                }
            }
        };
        self.depth -= wraps;
        r
    }

    fn prefix(&mut self) -> Result<Expr, SmqlError> {
        let pos = self.pos();
        let kind = match self.peek().clone() {
            Tok::Num(n) => {
                self.bump();
                ExprKind::Num(n)
            }
            Tok::Str(s) => {
                self.bump();
                ExprKind::Str(s)
            }
            Tok::True => {
                self.bump();
                ExprKind::Bool(true)
            }
            Tok::False => {
                self.bump();
                ExprKind::Bool(false)
            }
            Tok::Nil => {
                self.bump();
                ExprKind::Nil
            }
            Tok::Ident(name) => {
                self.bump();
                if self.peek() == &Tok::LParen {
                    self.bump();
                    ExprKind::Call(name, self.items(Tok::RParen)?)
                } else {
                    ExprKind::Var(name)
                }
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr(0)?;
                self.expect(Tok::RParen)?;
                return Ok(e);
            }
            Tok::LBracket => {
                self.bump();
                ExprKind::List(self.items(Tok::RBracket)?)
            }
            Tok::Minus => {
                self.bump();
                ExprKind::Unary(UnOp::Neg, Box::new(self.expr(PREFIX_BP)?))
            }
            Tok::Not => {
                self.bump();
                ExprKind::Unary(UnOp::Not, Box::new(self.expr(PREFIX_BP)?))
            }
            Tok::If => {
                self.bump();
                let c = self.expr(0)?;
                self.expect(Tok::Then)?;
                let t = self.expr(0)?;
                self.expect(Tok::Else)?;
                let e = self.expr(0)?;
                ExprKind::If(Box::new(c), Box::new(t), Box::new(e))
            }
            Tok::Pipe => {
                self.bump();
                let mut params = Vec::new();
                if self.peek() != &Tok::Pipe {
                    loop {
                        let ppos = self.pos();
                        let name = self.ident()?;
                        if params.contains(&name) {
                            return Err(SmqlError::syntax(ppos, format!("duplicate parameter `{name}`"), vec![]));
                        }
                        params.push(name);
                        if self.peek() == &Tok::Comma {
                            self.bump();
                        } else {
                            break;
                        }
                    }
                }
                self.expect(Tok::Pipe)?;
                let body = self.expr(0)?;
                ExprKind::Lambda(params, Arc::new(body))
            }
            _ => return Err(self.unexpected(EXPR_START.iter().map(|s| s.to_string()).collect())),
        };
        Ok(Expr::new(kind, pos))
    }

    /// Comma-separated expressions up to `close`; the opener is consumed.
    fn items(&mut self, close: Tok) -> Result<Vec<Expr>, SmqlError> {
        let mut items = Vec::new();
        if *self.peek() == close {
            self.bump();
            return Ok(items);
        }
        loop {
            items.push(self.expr(0)?);
            if self.peek() == &Tok::Comma {
                self.bump();
            } else {
                self.expect(close)?;
                return Ok(items);
            }
        }
    }
}
