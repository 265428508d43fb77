use super::{Comparator, Expr, Formula, Interval};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Plus,
    Minus,
    Star,
    Bang,
    Amp,
    Pipe,
    Cmp(Comparator),
    End,
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        let tok = match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b'[' => Tok::LBracket,
            b']' => Tok::RBracket,
            b',' => Tok::Comma,
            b'+' => Tok::Plus,
            b'-' => Tok::Minus,
            b'*' => Tok::Star,
            b'!' => Tok::Bang,
            b'&' => Tok::Amp,
            b'|' => Tok::Pipe,
            b'<' | b'>' => {
                let eq = bytes.get(i + 1) == Some(&b'=');
                let cmp = match (c, eq) {
                    (b'<', false) => Comparator::Lt,
                    (b'<', true) => Comparator::Le,
                    (_, false) => Comparator::Gt,
                    (_, true) => Comparator::Ge,
                };
                if eq {
                    i += 1;
                }
                Tok::Cmp(cmp)
            }
            b'0'..=b'9' | b'.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let lit = &text[start..i];
                let v = lit.parse::<f64>().map_err(|_| Error::Syntax {
                    pos: start,
                    msg: format!("malformed number `{lit}`"),
                })?;
                out.push((Tok::Num(v), start));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Ident(text[start..i].to_string()), start));
                continue;
            }
            _ => {
                return Err(Error::Syntax {
                    pos: start,
                    msg: format!("unexpected character `{}`", text[start..].chars().next().unwrap_or('?')),
                })
            }
        };
        out.push((tok, start));
        i += 1;
    }
    out.push((Tok::End, text.len()));
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

/// Parses STL text into a [`Formula`].
pub fn parse(text: &str) -> Result<Formula> {
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
    };
    let f = p.formula()?;
    match p.peek() {
        Tok::End => Ok(f),
        t => Err(p.error(format!("unexpected {t:?} after formula"))),
    }
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn peek_at(&self, offset: usize) -> &Tok {
        let i = (self.pos + offset).min(self.toks.len() - 1);
        &self.toks[i].0
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn error(&self, msg: String) -> Error {
        Error::Syntax {
            pos: self.offset(),
            msg,
        }
    }

    fn expect(&mut self, tok: Tok) -> Result<()> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            Err(self.error(format!("expected {tok:?}, found {:?}", self.peek())))
        }
    }

    fn formula(&mut self) -> Result<Formula> {
        let mut lhs = self.and()?;
        while *self.peek() == Tok::Pipe {
            self.bump();
            let rhs = self.and()?;
            lhs = Formula::or(lhs, rhs);
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Formula> {
        let mut lhs = self.unary()?;
        while *self.peek() == Tok::Amp {
            self.bump();
            let rhs = self.unary()?;
            lhs = Formula::and(lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Formula> {
        match self.peek().clone() {
            Tok::Bang => {
                self.bump();
                Ok(Formula::not(self.unary()?))
            }
            Tok::Ident(name) if (name == "F" || name == "G") && *self.peek_at(1) == Tok::LBracket => {
                self.bump();
                let interval = self.interval()?;
                let body = self.unary()?;
                Ok(if name == "F" {
                    Formula::eventually(interval, body)
                } else {
                    Formula::always(interval, body)
                })
            }
            Tok::LParen => {
                // Either a parenthesized formula or a predicate whose left
                // side starts with a parenthesized expression.
                let save = self.pos;
                self.bump();
                let grouped = self
                    .formula()
                    .and_then(|f| self.expect(Tok::RParen).map(|_| f));
                match grouped {
                    Ok(f) if !self.continues_expression() => Ok(f),
                    Ok(_) | Err(_) => {
                        let group_pos = self.pos;
                        let group_err = grouped.err();
                        self.pos = save;
                        match self.predicate() {
                            Ok(p) => Ok(p),
                            Err(e) => match group_err {
                                Some(g) if group_pos > self.pos => Err(g),
                                _ => Err(e),
                            },
                        }
                    }
                }
            }
            _ => self.predicate(),
        }
    }

    fn continues_expression(&self) -> bool {
        matches!(
            self.peek(),
            Tok::Cmp(_) | Tok::Plus | Tok::Minus | Tok::Star
        )
    }

    fn interval(&mut self) -> Result<Interval> {
        self.expect(Tok::LBracket)?;
        let at = self.offset();
        let a = self.signed_number()?;
        self.expect(Tok::Comma)?;
        let b = match self.peek() {
            Tok::Ident(s) if s == "inf" => {
                self.bump();
                f64::INFINITY
            }
            _ => self.signed_number()?,
        };
        self.expect(Tok::RBracket)?;
        Interval::new(a, b).map_err(|e| match e {
            Error::NegativeBound(_) | Error::ReversedInterval { .. } => e,
            other => Error::Syntax {
                pos: at,
                msg: other.to_string(),
            },
        })
    }

    fn signed_number(&mut self) -> Result<f64> {
        let neg = if *self.peek() == Tok::Minus {
            self.bump();
            true
        } else {
            false
        };
        match *self.peek() {
            Tok::Num(v) => {
                self.bump();
                Ok(if neg { -v } else { v })
            }
            ref t => Err(self.error(format!("expected number, found {t:?}"))),
        }
    }

    fn predicate(&mut self) -> Result<Formula> {
        let lhs = self.expr()?;
        let cmp = match self.peek() {
            Tok::Cmp(c) => *c,
            t => return Err(self.error(format!("expected comparator, found {t:?}"))),
        };
        self.bump();
        let rhs = self.expr()?;
        Ok(Formula::pred(lhs, cmp, rhs))
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Tok::Plus => {
                    self.bump();
                    let rhs = self.term()?;
                    lhs = Expr::Add(Box::new(lhs), Box::new(rhs));
                }
                Tok::Minus => {
                    self.bump();
                    let rhs = self.term()?;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let save = self.pos;
        if let Ok(c) = self.signed_number() {
            if *self.peek() == Tok::Star {
                self.bump();
                let f = self.factor()?;
                return Ok(Expr::Scale(c, Box::new(f)));
            }
        }
        self.pos = save;
        self.factor()
    }

    fn factor(&mut self) -> Result<Expr> {
        match self.peek().clone() {
            Tok::Num(_) | Tok::Minus => Ok(Expr::Const(self.signed_number()?)),
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Tok::Ident(name) => {
                self.bump();
                match name.as_str() {
                    "abs" if *self.peek() == Tok::LParen => {
                        self.bump();
                        let e = self.expr()?;
                        self.expect(Tok::RParen)?;
                        Ok(Expr::Abs(Box::new(e)))
                    }
                    "max" if *self.peek() == Tok::LParen => {
                        self.bump();
                        let a = self.expr()?;
                        self.expect(Tok::Comma)?;
                        let b = self.expr()?;
                        self.expect(Tok::RParen)?;
                        Ok(Expr::Max(Box::new(a), Box::new(b)))
                    }
                    "inf" => Err(Error::Syntax {
                        pos: self.toks[self.pos - 1].1,
                        msg: "`inf` is only allowed as an interval bound".into(),
                    }),
                    _ => Ok(Expr::Channel(name)),
                }
            }
            t => Err(self.error(format!("expected expression, found {t:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ch(n: &str) -> Box<Expr> {
        Box::new(Expr::channel(n))
    }

    #[test]
    fn eventually_predicate() {
        let f = parse("F[2,7] (s1 > 0.5)").unwrap();
        assert_eq!(
            f,
            Formula::eventually(
                Interval::new(2.0, 7.0).unwrap(),
                Formula::pred(Expr::channel("s1"), Comparator::Gt, Expr::Const(0.5))
            )
        );
        // parentheses are optional
        assert_eq!(parse("F[2,7] s1 > 0.5").unwrap(), f);
    }

    #[test]
    fn static_regression_formula() {
        let f = parse("(F[0,5] G[0,inf] abs(g - r) < 0.1) & (F[0,inf] G[0,inf] abs(g - r) < 0.05)")
            .unwrap();
        let err = || Expr::Abs(Box::new(Expr::Sub(ch("g"), ch("r"))));
        let clause = |b: f64, eps: f64| {
            Formula::eventually(
                Interval::new(0.0, b).unwrap(),
                Formula::always(
                    Interval::unbounded(),
                    Formula::pred(err(), Comparator::Lt, Expr::Const(eps)),
                ),
            )
        };
        let expected = Formula::and(clause(5.0, 0.1), clause(f64::INFINITY, 0.05));
        assert_eq!(f, expected);
    }

    #[test]
    fn interval_errors() {
        assert_eq!(
            parse("F[5,2] s1 > 0"),
            Err(Error::ReversedInterval { a: 5.0, b: 2.0 })
        );
        assert_eq!(parse("G[-1,2] s1 > 0"), Err(Error::NegativeBound(-1.0)));
    }

    #[test]
    fn syntax_errors_carry_position() {
        match parse("s1 > ") {
            Err(Error::Syntax { pos, .. }) => assert_eq!(pos, 5),
            other => panic!("{other:?}"),
        }
        match parse("s1 >> 2") {
            Err(Error::Syntax { pos, .. }) => assert_eq!(pos, 4),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse("s1 $ 2"), Err(Error::Syntax { pos: 3, .. })));
        assert!(matches!(parse("(s1 > 0"), Err(Error::Syntax { .. })));
        assert!(matches!(parse(""), Err(Error::Syntax { pos: 0, .. })));
    }

    #[test]
    fn precedence() {
        // ! > temporal > & > |
        let f = parse("!a > 0 & b > 0 | c > 0").unwrap();
        let p = |n: &str| Formula::pred(Expr::channel(n), Comparator::Gt, Expr::Const(0.0));
        assert_eq!(
            f,
            Formula::or(Formula::and(Formula::not(p("a")), p("b")), p("c"))
        );
        let g = parse("G[0,1] a > 0 & b > 0").unwrap();
        assert_eq!(
            g,
            Formula::and(Formula::always(Interval::new(0.0, 1.0).unwrap(), p("a")), p("b"))
        );
    }

    #[test]
    fn control_formula() {
        let f = parse("(F[0,inf] G[0,inf] x_D < 150) & !(F[0,inf] G[0,15] x_B > 0.1)").unwrap();
        assert_eq!(f.channels(), vec!["x_D", "x_B"]);
        assert!(matches!(f, Formula::And(_, ref b) if matches!(**b, Formula::Not(_))));
    }

    #[test]
    fn expressions() {
        let f = parse("2 * max(0, abs(a - b) - 0.1) + -1 >= (c)").unwrap();
        let Formula::Predicate { lhs, cmp, rhs } = f else {
            panic!()
        };
        assert_eq!(cmp, Comparator::Ge);
        assert_eq!(*ch("c"), rhs);
        assert_eq!(
            lhs,
            Expr::Add(
                Box::new(Expr::Scale(
                    2.0,
                    Box::new(Expr::Max(
                        Box::new(Expr::Const(0.0)),
                        Box::new(Expr::Sub(
                            Box::new(Expr::Abs(Box::new(Expr::Sub(ch("a"), ch("b"))))),
                            Box::new(Expr::Const(0.1))
                        ))
                    ))
                )),
                Box::new(Expr::Const(-1.0))
            )
        );
        assert!(parse("a < inf").is_err());
        assert_eq!(
            parse("x < 1e-3").unwrap(),
            Formula::pred(Expr::channel("x"), Comparator::Lt, Expr::Const(1e-3))
        );
    }

    #[test]
    fn parenthesized_predicate_lhs() {
        let f = parse("((s1 - 0.5) > 0) & (s1 < 1)").unwrap();
        assert!(matches!(f, Formula::And(..)));
        let g = parse("(s1 + s2) * 1 > 0");
        assert!(g.is_err());
        assert!(parse("(s1 + s2) > 0").is_ok());
    }
}
