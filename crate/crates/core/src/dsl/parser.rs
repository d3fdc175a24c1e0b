use super::ast::*;
use super::lexer::{tokenize, Tok, Token};
use super::{BindingError, DslError, ParseError};

const KEYWORDS: &[&str] = &[
    "forall", "exists", "in", "if", "then", "else", "and", "or", "true", "false", "int", "float",
    "bool", "str", "dtype", "tensor", "list", "tuple", "len", "ndim", "shape", "dtype_", "min",
    "max",
];

pub fn is_keyword(s: &str) -> bool {
    KEYWORDS.contains(&s)
}

/// Parse `{v: type, ...} |= expr`, then check variable scoping.
pub fn parse_rule(text: &str) -> Result<Rule, DslError> {
    let tokens = tokenize(text)?;
    let mut p = Parser {
        src: text,
        tokens,
        pos: 0,
    };
    let (bindings, body) = p.rule()?;
    let rule = Rule {
        name: String::new(),
        description: String::new(),
        bindings,
        body,
    };
    check_scopes(&rule, text)?;
    Ok(rule)
}

/// Parse a standalone type such as `list(int)` or `int|str`.
pub fn parse_type(text: &str) -> Result<TypeExpr, DslError> {
    let tokens = tokenize(text)?;
    let mut p = Parser {
        src: text,
        tokens,
        pos: 0,
    };
    let ty = p.ty()?;
    p.expect(Tok::Eof, "end of type")?;
    Ok(ty)
}

struct Parser<'a> {
    src: &'a str,
    tokens: Vec<Token>,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn span(&self) -> Span {
        self.tokens[self.pos].span
    }

    fn prev_end(&self) -> usize {
        if self.pos == 0 {
            0
        } else {
            self.tokens[self.pos - 1].span.end
        }
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos < self.tokens.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn error(&self, msg: &str) -> ParseError {
        let t = &self.tokens[self.pos];
        ParseError::at(self.src, t.span, msg, &t.tok.describe())
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<Token, ParseError> {
        if *self.peek() == tok {
            Ok(self.bump())
        } else {
            Err(self.error(&format!("expected {what}")))
        }
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn expect_kw(&mut self, kw: &str) -> Result<Token, ParseError> {
        if self.is_kw(kw) {
            Ok(self.bump())
        } else {
            Err(self.error(&format!("expected '{kw}'")))
        }
    }

    fn ident(&mut self, what: &str) -> Result<(String, Span), ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) if !is_keyword(&s) => {
                let t = self.bump();
                Ok((s, t.span))
            }
            _ => Err(self.error(&format!("expected {what}"))),
        }
    }

    fn rule(&mut self) -> Result<(Vec<Binding>, Expr), ParseError> {
        self.expect(Tok::LBrace, "'{' opening the variable bindings")?;
        let mut bindings = Vec::new();
        loop {
            let (name, _) = self.ident("a variable name")?;
            self.expect(Tok::Colon, "':' after variable name")?;
            let ty = self.ty()?;
            bindings.push(Binding { name, ty });
            match self.peek() {
                Tok::Comma => {
                    self.bump();
                }
                Tok::RBrace => {
                    self.bump();
                    break;
                }
                _ => return Err(self.error("expected ',' or '}' in bindings")),
            }
        }
        self.expect(Tok::Models, "'|='")?;
        let body = self.expr()?;
        self.expect(Tok::Eof, "end of rule")?;
        Ok((bindings, body))
    }

    fn ty(&mut self) -> Result<TypeExpr, ParseError> {
        let mut ty = self.ty_atom()?;
        while *self.peek() == Tok::Pipe {
            self.bump();
            let rhs = self.ty_atom()?;
            ty = TypeExpr::Union(Box::new(ty), Box::new(rhs));
        }
        Ok(ty)
    }

    fn ty_atom(&mut self) -> Result<TypeExpr, ParseError> {
        let name = match self.peek() {
            Tok::Ident(s) => s.clone(),
            _ => return Err(self.error("expected a type")),
        };
        let ty = match name.as_str() {
            "int" => TypeExpr::Int,
            "float" => TypeExpr::Float,
            "bool" => TypeExpr::Bool,
            "dtype" => TypeExpr::Dtype,
            "str" => TypeExpr::Str,
            "tensor" => TypeExpr::Tensor,
            "list" | "tuple" => {
                self.bump();
                self.expect(Tok::LParen, "'(' after sequence type")?;
                let elem = self.ty()?;
                self.expect(Tok::RParen, "')' closing sequence type")?;
                return Ok(if name == "list" {
                    TypeExpr::List(Box::new(elem))
                } else {
                    TypeExpr::Tuple(Box::new(elem))
                });
            }
            _ => return Err(self.error("expected a type")),
        };
        self.bump();
        Ok(ty)
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        self.or_expr()
    }

    fn or_expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.and_expr()?;
        while self.is_kw("or") {
            self.bump();
            let rhs = self.and_expr()?;
            let span = lhs.span.join(rhs.span);
            lhs = Expr::new(ExprKind::Or(lhs, rhs), span);
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.cmp_expr()?;
        while self.is_kw("and") {
            self.bump();
            let rhs = self.cmp_expr()?;
            let span = lhs.span.join(rhs.span);
            lhs = Expr::new(ExprKind::And(lhs, rhs), span);
        }
        Ok(lhs)
    }

    fn cmp_op(&self) -> Option<CmpOp> {
        Some(match self.peek() {
            Tok::Eq => CmpOp::Eq,
            Tok::Ne => CmpOp::Ne,
            Tok::Lt => CmpOp::Lt,
            Tok::Le => CmpOp::Le,
            Tok::Gt => CmpOp::Gt,
            Tok::Ge => CmpOp::Ge,
            _ => return None,
        })
    }

    fn cmp_expr(&mut self) -> Result<Expr, ParseError> {
        let lhs = self.add_expr()?;
        if let Some(op) = self.cmp_op() {
            self.bump();
            let rhs = self.add_expr()?;
            if self.cmp_op().is_some() {
                return Err(self.error("comparison operators do not chain; use 'and'"));
            }
            let span = lhs.span.join(rhs.span);
            return Ok(Expr::new(ExprKind::Cmp { op, lhs, rhs }, span));
        }
        Ok(lhs)
    }

    fn add_expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.mul_expr()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => ArithOp::Add,
                Tok::Minus => ArithOp::Sub,
                _ => break,
            };
            self.bump();
            let rhs = self.mul_expr()?;
            let span = lhs.span.join(rhs.span);
            lhs = Expr::new(ExprKind::Arith { op, lhs, rhs }, span);
        }
        Ok(lhs)
    }

    fn mul_expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => ArithOp::Mul,
                Tok::Slash => ArithOp::Div,
                _ => break,
            };
            self.bump();
            let rhs = self.unary()?;
            let span = lhs.span.join(rhs.span);
            lhs = Expr::new(ExprKind::Arith { op, lhs, rhs }, span);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if *self.peek() == Tok::Minus {
            let start = self.span().start;
            self.bump();
            if let Tok::Number(int, frac) = self.peek().clone() {
                self.bump();
                let span = Span::new(start, self.prev_end());
                let lit = self.number(&int, frac.as_deref(), true, span)?;
                return Ok(Expr::new(ExprKind::Literal(lit), span));
            }
            let operand = self.unary()?;
            let span = Span::new(start, operand.span.end);
            let zero = Expr::new(ExprKind::Literal(Literal::Int(0)), Span::new(start, start));
            return Ok(Expr::new(
                ExprKind::Arith {
                    op: ArithOp::Sub,
                    lhs: zero,
                    rhs: operand,
                },
                span,
            ));
        }
        self.primary()
    }

    fn number(
        &self,
        int: &str,
        frac: Option<&str>,
        negative: bool,
        span: Span,
    ) -> Result<Literal, ParseError> {
        match frac {
            None => {
                let text = if negative {
                    format!("-{int}")
                } else {
                    int.to_string()
                };
                text.parse::<i64>().map(Literal::Int).map_err(|_| {
                    ParseError::at(self.src, span, "integer literal out of range", &text)
                })
            }
            Some(f) => Literal::real_from_decimal(int, f, negative).ok_or_else(|| {
                ParseError::at(self.src, span, "malformed number", &format!("{int}.{f}"))
            }),
        }
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let start = self.span().start;
        match self.peek().clone() {
            Tok::Number(int, frac) => {
                let t = self.bump();
                let lit = self.number(&int, frac.as_deref(), false, t.span)?;
                Ok(Expr::new(ExprKind::Literal(lit), t.span))
            }
            Tok::Str(s) => {
                let t = self.bump();
                Ok(Expr::new(ExprKind::Literal(Literal::Str(s)), t.span))
            }
            Tok::LParen => {
                self.bump();
                let inner = self.expr()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(inner)
            }
            Tok::Ident(word) => match word.as_str() {
                "true" | "false" => {
                    let t = self.bump();
                    Ok(Expr::new(
                        ExprKind::Literal(Literal::Bool(word == "true")),
                        t.span,
                    ))
                }
                "forall" | "exists" => self.quantifier(),
                "if" => self.conditional(),
                w if TensorFn::from_name(w).is_some() => self.call(),
                w if is_keyword(w) => Err(self.error("unexpected keyword")),
                _ => {
                    let (name, span) = self.ident("an expression")?;
                    match self.peek() {
                        Tok::LBracket => {
                            self.bump();
                            let index = self.expr()?;
                            self.expect(Tok::RBracket, "']'")?;
                            Ok(Expr::new(
                                ExprKind::TupleIndex {
                                    target: name,
                                    index,
                                },
                                Span::new(start, self.prev_end()),
                            ))
                        }
                        Tok::Dot => {
                            self.bump();
                            self.expect_kw("len")?;
                            Ok(Expr::new(
                                ExprKind::TupleLen { target: name },
                                Span::new(start, self.prev_end()),
                            ))
                        }
                        _ => Ok(Expr::new(ExprKind::Var(name), span)),
                    }
                }
            },
            _ => Err(self.error("expected an expression")),
        }
    }

    fn call(&mut self) -> Result<Expr, ParseError> {
        let start = self.span().start;
        let name = match self.bump().tok {
            Tok::Ident(s) => s,
            _ => unreachable!(),
        };
        let func = TensorFn::from_name(&name).expect("checked by caller");
        self.expect(Tok::LParen, &format!("'(' after {name}"))?;
        let (target, _) = self.ident("a tensor variable")?;
        let index = if func.takes_index() {
            if *self.peek() != Tok::Comma {
                return Err(self.error("shape requires an index argument: shape(v, i)"));
            }
            self.bump();
            Some(self.expr()?)
        } else {
            if *self.peek() == Tok::Comma {
                return Err(self.error(&format!("{name} takes exactly one argument")));
            }
            None
        };
        self.expect(Tok::RParen, "')'")?;
        Ok(Expr::new(
            ExprKind::TensorFn {
                func,
                target,
                index,
            },
            Span::new(start, self.prev_end()),
        ))
    }

    fn quantifier(&mut self) -> Result<Expr, ParseError> {
        let start = self.span().start;
        let kind = if self.is_kw("forall") {
            Quantifier::ForAll
        } else {
            Quantifier::Exists
        };
        self.bump();
        let (bound, _) = self.ident("a bound variable name")?;
        self.expect_kw("in")?;
        self.expect(Tok::LBracket, "'[' opening the quantifier range")?;
        let lo = self.expr()?;
        self.expect(Tok::Comma, "',' in quantifier range")?;
        let hi = self.expr()?;
        self.expect(Tok::RBracket, "']' closing the quantifier range")?;
        self.expect(Tok::Colon, "':' before quantifier body")?;
        let body = self.expr()?;
        let span = Span::new(start, body.span.end);
        Ok(Expr::new(
            ExprKind::Quant {
                kind,
                bound,
                lo,
                hi,
                body,
            },
            span,
        ))
    }

    fn conditional(&mut self) -> Result<Expr, ParseError> {
        let start = self.span().start;
        self.expect_kw("if")?;
        let cond = self.expr()?;
        self.expect_kw("then")?;
        let then = self.expr()?;
        let otherwise = if self.is_kw("else") {
            self.bump();
            Some(self.expr()?)
        } else {
            None
        };
        let end = otherwise.as_ref().map_or(then.span.end, |e| e.span.end);
        Ok(Expr::new(
            ExprKind::If {
                cond,
                then,
                otherwise,
            },
            Span::new(start, end),
        ))
    }
}

fn check_scopes(rule: &Rule, src: &str) -> Result<(), DslError> {
    for (i, b) in rule.bindings.iter().enumerate() {
        if rule.bindings[..i].iter().any(|o| o.name == b.name) {
            return Err(BindingError::new(
                src,
                Span::default(),
                format!("duplicate binding '{}'", b.name),
            )
            .into());
        }
    }
    let mut scope: Vec<&str> = rule.bindings.iter().map(|b| b.name.as_str()).collect();
    walk_scope(&rule.body, &mut scope, rule.bindings.len(), src)
}

fn walk_scope<'a>(
    e: &'a Expr,
    scope: &mut Vec<&'a str>,
    n_bindings: usize,
    src: &str,
) -> Result<(), DslError> {
    let check = |name: &str, span: Span, scope: &Vec<&str>| -> Result<(), DslError> {
        if scope.contains(&name) {
            Ok(())
        } else {
            Err(BindingError::new(src, span, format!("unbound variable '{name}'")).into())
        }
    };
    match &*e.kind {
        ExprKind::Literal(_) => Ok(()),
        ExprKind::Var(n) => check(n, e.span, scope),
        ExprKind::TupleLen { target } => check(target, e.span, scope),
        ExprKind::TensorFn { target, index, .. } => {
            check(target, e.span, scope)?;
            if let Some(i) = index {
                walk_scope(i, scope, n_bindings, src)?;
            }
            Ok(())
        }
        ExprKind::TupleIndex { target, index } => {
            check(target, e.span, scope)?;
            walk_scope(index, scope, n_bindings, src)
        }
        ExprKind::Arith { lhs, rhs, .. } | ExprKind::Cmp { lhs, rhs, .. } => {
            walk_scope(lhs, scope, n_bindings, src)?;
            walk_scope(rhs, scope, n_bindings, src)
        }
        ExprKind::And(l, r) | ExprKind::Or(l, r) => {
            walk_scope(l, scope, n_bindings, src)?;
            walk_scope(r, scope, n_bindings, src)
        }
        ExprKind::Quant {
            bound, lo, hi, body, ..
        } => {
            walk_scope(lo, scope, n_bindings, src)?;
            walk_scope(hi, scope, n_bindings, src)?;
            if scope.contains(&bound.as_str()) {
                let what = if scope[..n_bindings].contains(&bound.as_str()) {
                    "collides with a rule variable"
                } else {
                    "shadows an enclosing quantifier"
                };
                return Err(BindingError::new(
                    src,
                    e.span,
                    format!("quantifier variable '{bound}' {what}"),
                )
                .into());
            }
            scope.push(bound);
            let r = walk_scope(body, scope, n_bindings, src);
            scope.pop();
            r
        }
        ExprKind::If {
            cond,
            then,
            otherwise,
        } => {
            walk_scope(cond, scope, n_bindings, src)?;
            walk_scope(then, scope, n_bindings, src)?;
            if let Some(o) = otherwise {
                walk_scope(o, scope, n_bindings, src)?;
            }
            Ok(())
        }
    }
}
