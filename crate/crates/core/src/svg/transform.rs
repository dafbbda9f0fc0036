//! `transform` attribute parsing, just enough to recognise identities.

/// Affine matrix `[a c e; b d f; 0 0 1]` in SVG order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Matrix {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
}

impl Matrix {
    pub const IDENTITY: Matrix = Matrix {
        a: 1.0,
        b: 0.0,
        c: 0.0,
        d: 1.0,
        e: 0.0,
        f: 0.0,
    };

    /// `self * other`, i.e. `other` applied first.
    pub fn then(self, other: Matrix) -> Matrix {
        Matrix {
            a: self.a * other.a + self.c * other.b,
            b: self.b * other.a + self.d * other.b,
            c: self.a * other.c + self.c * other.d,
            d: self.b * other.c + self.d * other.d,
            e: self.a * other.e + self.c * other.f + self.e,
            f: self.b * other.e + self.d * other.f + self.f,
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }
}

fn rotation(deg: f64) -> Matrix {
    if deg == 0.0 {
        return Matrix::IDENTITY;
    }
    let (s, c) = deg.to_radians().sin_cos();
    Matrix {
        a: c,
        b: s,
        c: -s,
        d: c,
        e: 0.0,
        f: 0.0,
    }
}

fn translation(tx: f64, ty: f64) -> Matrix {
    Matrix {
        e: tx,
        f: ty,
        ..Matrix::IDENTITY
    }
}

/// Parses an SVG transform list. Returns `None` on any syntax error.
pub fn parse_transform(text: &str) -> Option<Matrix> {
    let mut rest = text.trim();
    let mut m = Matrix::IDENTITY;
    while !rest.is_empty() {
        let open = rest.find('(')?;
        let name = rest[..open].trim().trim_start_matches(',').trim();
        let close = rest[open..].find(')')? + open;
        let args: Vec<f64> = rest[open + 1..close]
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<_>>()?;
        let step = match (name, args.as_slice()) {
            ("matrix", [a, b, c, d, e, f]) => Matrix {
                a: *a,
                b: *b,
                c: *c,
                d: *d,
                e: *e,
                f: *f,
            },
            ("translate", [tx]) => translation(*tx, 0.0),
            ("translate", [tx, ty]) => translation(*tx, *ty),
            ("scale", [s]) => Matrix {
                a: *s,
                d: *s,
                ..Matrix::IDENTITY
            },
            ("scale", [sx, sy]) => Matrix {
                a: *sx,
                d: *sy,
                ..Matrix::IDENTITY
            },
            ("rotate", [deg]) => rotation(*deg),
            ("rotate", [deg, cx, cy]) => translation(*cx, *cy)
                .then(rotation(*deg))
                .then(translation(-cx, -cy)),
            ("skewX", [deg]) => Matrix {
                c: if *deg == 0.0 {
                    0.0
                } else {
                    deg.to_radians().tan()
                },
                ..Matrix::IDENTITY
            },
            ("skewY", [deg]) => Matrix {
                b: if *deg == 0.0 {
                    0.0
                } else {
                    deg.to_radians().tan()
                },
                ..Matrix::IDENTITY
            },
            _ => return None,
        };
        m = m.then(step);
        rest = rest[close + 1..]
            .trim_start()
            .trim_start_matches(',')
            .trim_start();
    }
    Some(m)
}

/// True when the transform list parses and composes to exactly the identity.
pub fn is_identity_transform(text: &str) -> bool {
    parse_transform(text).is_some_and(|m| m.is_identity())
}
