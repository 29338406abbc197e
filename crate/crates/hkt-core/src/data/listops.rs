use crate::error::{HktError, Result};
use crate::numkit::Prng;

// Token layout: 0-9 digits, 10-13 operator-open tokens, 14 close,
// 15 pad, 16 begin. 17 ids total.
pub const TOK_OPEN_MAX: usize = 10;
pub const TOK_OPEN_MIN: usize = 11;
pub const TOK_OPEN_MED: usize = 12;
pub const TOK_OPEN_SM: usize = 13;
pub const TOK_CLOSE: usize = 14;
pub const TOK_PAD: usize = 15;
pub const TOK_BEGIN: usize = 16;
pub const LISTOPS_VOCAB: usize = 17;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Max,
    Min,
    Med,
    Sm,
}

impl OpKind {
    fn open_token(self) -> usize {
        match self {
            OpKind::Max => TOK_OPEN_MAX,
            OpKind::Min => TOK_OPEN_MIN,
            OpKind::Med => TOK_OPEN_MED,
            OpKind::Sm => TOK_OPEN_SM,
        }
    }

    fn name(self) -> &'static str {
        match self {
            OpKind::Max => "MAX",
            OpKind::Min => "MIN",
            OpKind::Med => "MED",
            OpKind::Sm => "SM",
        }
    }
}

#[derive(Debug, Clone)]
pub enum Expr {
    Digit(u8),
    Op(OpKind, Vec<Expr>),
}

impl Expr {
    /// MAX / MIN / lower-median / sum mod 10.
    pub fn eval(&self) -> u8 {
        match self {
            Expr::Digit(d) => *d,
            Expr::Op(kind, children) => {
                let mut vals: Vec<u8> = children.iter().map(Expr::eval).collect();
                match kind {
                    OpKind::Max => *vals.iter().max().unwrap(),
                    OpKind::Min => *vals.iter().min().unwrap(),
                    OpKind::Med => {
                        vals.sort_unstable();
                        vals[(vals.len() - 1) / 2]
                    }
                    OpKind::Sm => (vals.iter().map(|&v| v as u32).sum::<u32>() % 10) as u8,
                }
            }
        }
    }

    pub fn to_tokens(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.push_tokens(&mut out);
        out
    }

    fn push_tokens(&self, out: &mut Vec<usize>) {
        match self {
            Expr::Digit(d) => out.push(*d as usize),
            Expr::Op(kind, children) => {
                out.push(kind.open_token());
                for c in children {
                    c.push_tokens(out);
                }
                out.push(TOK_CLOSE);
            }
        }
    }

    pub fn render(&self) -> String {
        match self {
            Expr::Digit(d) => d.to_string(),
            Expr::Op(kind, children) => {
                let mut s = format!("[{}", kind.name());
                for c in children {
                    s.push(' ');
                    s.push_str(&c.render());
                }
                s.push_str(" ]");
                s
            }
        }
    }
}

/// Random tree with operator nesting depth <= max_depth, arity uniform in
/// 2..=max_arity; each child recurses with probability 1/2 while depth
/// budget remains.
pub fn sample_tree(max_depth: usize, max_arity: usize, prng: &mut Prng) -> Expr {
    debug_assert!(max_depth >= 1 && max_arity >= 2);
    let kind = match prng.next_below(4) {
        0 => OpKind::Max,
        1 => OpKind::Min,
        2 => OpKind::Med,
        _ => OpKind::Sm,
    };
    let arity = 2 + prng.next_below(max_arity - 1);
    let children = (0..arity)
        .map(|_| {
            if max_depth > 1 && prng.next_f64() < 0.5 {
                sample_tree(max_depth - 1, max_arity, prng)
            } else {
                Expr::Digit(prng.next_below(10) as u8)
            }
        })
        .collect();
    Expr::Op(kind, children)
}

/// Evaluates a token sequence (pads and the begin marker are skipped).
pub fn evaluate_listops(tokens: &[usize]) -> Result<usize> {
    let body: Vec<(usize, usize)> = tokens
        .iter()
        .enumerate()
        .filter(|(_, &t)| t != TOK_PAD && t != TOK_BEGIN)
        .map(|(i, &t)| (i, t))
        .collect();
    if body.is_empty() {
        return Err(HktError::Parse {
            pos: 0,
            msg: "empty expression".into(),
        });
    }
    let mut cursor = 0;
    let v = parse_value(&body, &mut cursor)?;
    if cursor != body.len() {
        return Err(HktError::Parse {
            pos: body[cursor].0,
            msg: "trailing tokens after expression".into(),
        });
    }
    Ok(v as usize)
}

fn parse_value(body: &[(usize, usize)], cursor: &mut usize) -> Result<u8> {
    let (pos, tok) = *body.get(*cursor).ok_or_else(|| HktError::Parse {
        pos: body.last().map_or(0, |(p, _)| *p),
        msg: "unexpected end of expression".into(),
    })?;
    *cursor += 1;
    match tok {
        d if d < 10 => Ok(d as u8),
        TOK_OPEN_MAX | TOK_OPEN_MIN | TOK_OPEN_MED | TOK_OPEN_SM => {
            let mut vals = Vec::new();
            loop {
                let (p2, t2) = *body.get(*cursor).ok_or_else(|| HktError::Parse {
                    pos,
                    msg: "unclosed operator".into(),
                })?;
                if t2 == TOK_CLOSE {
                    *cursor += 1;
                    break;
                }
                if t2 > TOK_CLOSE {
                    return Err(HktError::Parse {
                        pos: p2,
                        msg: format!("unexpected token id {t2}"),
                    });
                }
                vals.push(parse_value(body, cursor)?);
            }
            if vals.is_empty() {
                return Err(HktError::Parse {
                    pos,
                    msg: "operator with no arguments".into(),
                });
            }
            match tok {
                TOK_OPEN_MAX => Ok(*vals.iter().max().unwrap()),
                TOK_OPEN_MIN => Ok(*vals.iter().min().unwrap()),
                TOK_OPEN_MED => {
                    vals.sort_unstable();
                    Ok(vals[(vals.len() - 1) / 2])
                }
                _ => Ok((vals.iter().map(|&v| v as u32).sum::<u32>() % 10) as u8),
            }
        }
        other => Err(HktError::Parse {
            pos,
            msg: format!("unexpected token id {other}"),
        }),
    }
}

/// Tokenises the textual form, e.g. "[MIN [MAX 1 2 ] 0 ]".
pub fn tokens_from_str(text: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for (i, word) in text.split_whitespace().enumerate() {
        let tok = match word {
            "[MAX" => TOK_OPEN_MAX,
            "[MIN" => TOK_OPEN_MIN,
            "[MED" => TOK_OPEN_MED,
            "[SM" => TOK_OPEN_SM,
            "]" => TOK_CLOSE,
            d => d.parse::<usize>().ok().filter(|&v| v < 10).ok_or_else(|| {
                HktError::Parse {
                    pos: i,
                    msg: format!("unknown word {word:?}"),
                }
            })?,
        };
        out.push(tok);
    }
    Ok(out)
}
