//! S-expression reader for program files.
//!
//! ```text
//! program := expr+                      one expression per action dimension
//! expr    := (const NUM)
//!          | (feature IDX)
//!          | (affine (NUM*) NUM)
//!          | (pid IDX NUM NUM NUM NUM)  feature setpoint kp ki kd
//!          | (clip expr NUM NUM)
//!          | (if IDX NUM expr expr)     then-branch taken when obs[IDX] < NUM
//!          | (sum expr+)
//!          | (tree node)
//! node    := (leaf NUM) | (leaf (NUM*) NUM) | (split IDX NUM node node)
//! ```
//!
//! `#` starts a comment running to the end of the line.

use crate::dsl::ast::{Expr, Leaf, Pid, ProgramAst, TreeNode};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAX_DEPTH: usize = 200;

#[derive(Debug, Clone, Copy)]
struct Span {
    line: usize,
    col: usize,
}

#[derive(Debug)]
enum Sexp<'a> {
    Atom(&'a str, Span),
    List(Vec<Sexp<'a>>, Span),
}

impl Sexp<'_> {
    fn span(&self) -> Span {
        match self {
            Sexp::Atom(_, s) | Sexp::List(_, s) => *s,
        }
    }
}

fn err<T>(span: Span, msg: impl Into<String>) -> Result<T> {
    Err(Error::parse(span.line, span.col, msg))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Tok<'a> {
    Open,
    Close,
    Atom(&'a str),
}

fn is_atom_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '+' | '_')
}

fn lex(text: &str) -> Result<Vec<(Tok<'_>, Span)>> {
    let mut toks = Vec::new();
    for (li, line) in text.lines().enumerate() {
        let mut chars = line.char_indices().peekable();
        while let Some(&(i, c)) = chars.peek() {
            // columns count characters, not bytes
            let span = Span {
                line: li + 1,
                col: line[..i].chars().count() + 1,
            };
            match c {
                '#' => break,
                '(' => {
                    toks.push((Tok::Open, span));
                    chars.next();
                }
                ')' => {
                    toks.push((Tok::Close, span));
                    chars.next();
                }
                c if c.is_whitespace() => {
                    chars.next();
                }
                c if is_atom_char(c) => {
                    let start = i;
                    let mut end = i;
                    while let Some(&(j, d)) = chars.peek() {
                        if !is_atom_char(d) {
                            break;
                        }
                        end = j + d.len_utf8();
                        chars.next();
                    }
                    toks.push((Tok::Atom(&line[start..end]), span));
                }
                other => return err(span, format!("unexpected character '{other}'")),
            }
        }
    }
    Ok(toks)
}

fn read(text: &str) -> Result<Vec<Sexp<'_>>> {
    let toks = lex(text)?;
    let mut stack: Vec<(Vec<Sexp>, Span)> = Vec::new();
    let mut top = Vec::new();
    for (tok, span) in toks {
        match tok {
            Tok::Open => {
                if stack.len() >= MAX_DEPTH {
                    return err(span, "nesting too deep");
                }
                stack.push((Vec::new(), span));
            }
            Tok::Close => {
                let (items, open) = match stack.pop() {
                    Some(frame) => frame,
                    None => return err(span, "unmatched ')'"),
                };
                let list = Sexp::List(items, open);
                match stack.last_mut() {
                    Some((parent, _)) => parent.push(list),
                    None => top.push(list),
                }
            }
            Tok::Atom(a) => match stack.last_mut() {
                Some((parent, _)) => parent.push(Sexp::Atom(a, span)),
                None => return err(span, format!("expected '(' but found '{a}'")),
            },
        }
    }
    if let Some((_, open)) = stack.pop() {
        return err(open, "unclosed '('");
    }
    Ok(top)
}

fn number<S: Scalar>(s: &Sexp) -> Result<S> {
    match s {
        Sexp::Atom(a, span) => match a.parse::<S>() {
            Ok(v) if v.is_finite() => Ok(v),
            Ok(_) => err(*span, format!("number '{a}' is not finite")),
            Err(_) => err(*span, format!("expected a number, found '{a}'")),
        },
        Sexp::List(_, span) => err(*span, "expected a number, found a list"),
    }
}

fn index(s: &Sexp, obs_dim: Option<usize>) -> Result<usize> {
    match s {
        Sexp::Atom(a, span) => {
            let i = a
                .parse::<usize>()
                .or_else(|_| err(*span, format!("expected a feature index, found '{a}'")))?;
            match obs_dim {
                Some(d) if i >= d => err(*span, format!("feature index {i} out of range for obs_dim {d}")),
                _ => Ok(i),
            }
        }
        Sexp::List(_, span) => err(*span, "expected a feature index, found a list"),
    }
}

fn numbers<S: Scalar>(s: &Sexp) -> Result<Vec<S>> {
    match s {
        Sexp::List(items, _) => items.iter().map(number).collect(),
        Sexp::Atom(a, span) => err(*span, format!("expected a parenthesised weight list, found '{a}'")),
    }
}

/// Splits a list into its head keyword and arguments.
fn head<'s, 'a>(s: &'s Sexp<'a>, what: &str) -> Result<(&'a str, &'s [Sexp<'a>], Span)> {
    match s {
        Sexp::List(items, span) => match items.first() {
            Some(Sexp::Atom(h, _)) => Ok((h, &items[1..], *span)),
            Some(other) => err(other.span(), format!("expected a {what} keyword")),
            None => err(*span, format!("empty list where a {what} was expected")),
        },
        Sexp::Atom(a, span) => err(*span, format!("expected a {what} in parentheses, found '{a}'")),
    }
}

fn arity(name: &str, args: &[Sexp], want: usize, span: Span) -> Result<()> {
    if args.len() == want {
        Ok(())
    } else {
        err(
            span,
            format!("arity error: '{name}' takes {want} arguments, got {}", args.len()),
        )
    }
}

struct Reader {
    obs_dim: Option<usize>,
}

impl Reader {
    fn expr<S: Scalar>(&self, s: &Sexp) -> Result<Expr<S>> {
        let (name, args, span) = head(s, "node")?;
        match name {
            "const" => {
                arity(name, args, 1, span)?;
                Ok(Expr::Const(number(&args[0])?))
            }
            "feature" => {
                arity(name, args, 1, span)?;
                Ok(Expr::Feature(index(&args[0], self.obs_dim)?))
            }
            "affine" => {
                arity(name, args, 2, span)?;
                let weights = numbers(&args[0])?;
                self.check_weights(weights.len(), args[0].span())?;
                Ok(Expr::Affine {
                    weights,
                    bias: number(&args[1])?,
                })
            }
            "pid" => {
                arity(name, args, 5, span)?;
                Ok(Expr::Pid(Pid {
                    feature: index(&args[0], self.obs_dim)?,
                    setpoint: number(&args[1])?,
                    kp: number(&args[2])?,
                    ki: number(&args[3])?,
                    kd: number(&args[4])?,
                }))
            }
            "clip" => {
                arity(name, args, 3, span)?;
                let child = self.expr(&args[0])?;
                let lo: S = number(&args[1])?;
                let hi: S = number(&args[2])?;
                if !(lo < hi) {
                    return err(args[1].span(), "clip requires lo < hi");
                }
                Ok(Expr::Clip {
                    child: Box::new(child),
                    lo,
                    hi,
                })
            }
            "if" => {
                arity(name, args, 4, span)?;
                Ok(Expr::If {
                    feature: index(&args[0], self.obs_dim)?,
                    threshold: number(&args[1])?,
                    then: Box::new(self.expr(&args[2])?),
                    otherwise: Box::new(self.expr(&args[3])?),
                })
            }
            "sum" => {
                if args.is_empty() {
                    return err(span, "arity error: 'sum' takes at least 1 argument, got 0");
                }
                Ok(Expr::Sum(args.iter().map(|a| self.expr(a)).collect::<Result<_>>()?))
            }
            "tree" => {
                arity(name, args, 1, span)?;
                Ok(Expr::Tree(self.tree(&args[0])?))
            }
            "leaf" | "split" => err(span, format!("'{name}' is only valid inside 'tree'")),
            other => err(span, format!("unknown node '{other}'")),
        }
    }

    fn tree<S: Scalar>(&self, s: &Sexp) -> Result<TreeNode<S>> {
        let (name, args, span) = head(s, "tree node")?;
        match name {
            "leaf" => match args {
                [v] => Ok(TreeNode::Leaf(Leaf::Const(number(v)?))),
                [w, b] => {
                    let weights = numbers(w)?;
                    self.check_weights(weights.len(), w.span())?;
                    Ok(TreeNode::Leaf(Leaf::Affine {
                        weights,
                        bias: number(b)?,
                    }))
                }
                _ => err(
                    span,
                    format!("arity error: 'leaf' takes 1 or 2 arguments, got {}", args.len()),
                ),
            },
            "split" => {
                arity(name, args, 4, span)?;
                Ok(TreeNode::Split {
                    feature: index(&args[0], self.obs_dim)?,
                    threshold: number(&args[1])?,
                    left: Box::new(self.tree(&args[2])?),
                    right: Box::new(self.tree(&args[3])?),
                })
            }
            other => err(span, format!("unknown tree node '{other}' (expected 'leaf' or 'split')")),
        }
    }

    fn check_weights(&self, n: usize, span: Span) -> Result<()> {
        match self.obs_dim {
            Some(d) if n != d => err(span, format!("affine has {n} weights, obs_dim is {d}")),
            _ => Ok(()),
        }
    }
}

fn parse_with<S: Scalar>(text: &str, obs_dim: Option<usize>) -> Result<ProgramAst<S>> {
    let forms = read(text)?;
    if forms.is_empty() {
        return Err(Error::parse(1, 1, "empty program"));
    }
    let reader = Reader { obs_dim };
    let outputs = forms.iter().map(|f| reader.expr(f)).collect::<Result<Vec<_>>>()?;
    Ok(ProgramAst::new(outputs))
}

/// Parses program source without knowledge of the observation space.
pub fn parse<S: Scalar>(text: &str) -> Result<ProgramAst<S>> {
    parse_with(text, None)
}

/// Parses program source, rejecting feature indices `>= obs_dim` and
/// affine weight lists whose length differs from `obs_dim`.
pub fn parse_for<S: Scalar>(text: &str, obs_dim: usize) -> Result<ProgramAst<S>> {
    parse_with(text, Some(obs_dim))
}

pub fn load_program<S: Scalar>(path: &std::path::Path, obs_dim: Option<usize>) -> Result<ProgramAst<S>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_with(&text, obs_dim)
}
