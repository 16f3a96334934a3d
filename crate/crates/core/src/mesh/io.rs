//! Line-oriented mesh text format.
//!
//! ```text
//! vertices N
//! x y            (N lines, 17 significant digits)
//! triangles M
//! v0 v1 v2 flag  (M lines; flag 1: (v0, v1) is the refinement edge,
//!                 flag 0: tag the longest edge on read)
//! boundary K
//! va vb          (K lines)
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{edge_key, Forest, Triangulation, Vertex};
use crate::error::{Error, Result};

/// Serializes the leaves of `t` as a standalone initial mesh. Vertices are
/// renumbered in increasing forest order.
pub fn write_mesh(forest: &Forest, t: &Triangulation) -> String {
    let mut used = BTreeMap::new();
    for &k in t.leaves() {
        for &v in &forest.triangle(k).v {
            used.insert(v, 0usize);
        }
    }
    for (i, slot) in used.values_mut().enumerate() {
        *slot = i;
    }
    let mut out = String::new();
    writeln!(out, "vertices {}", used.len()).unwrap();
    for &v in used.keys() {
        let p = forest.vertex(v);
        writeln!(out, "{:.16e} {:.16e}", p.x, p.y).unwrap();
    }
    writeln!(out, "triangles {}", t.len()).unwrap();
    let mut boundary = Vec::new();
    for &k in t.leaves() {
        let tri = forest.triangle(k);
        let [a, b, c] = tri.v.map(|v| used[&v]);
        writeln!(out, "{a} {b} {c} 1").unwrap();
        for (p, q) in tri.edges() {
            if forest.is_boundary_edge(p, q) {
                boundary.push(edge_key(used[&p], used[&q]));
            }
        }
    }
    boundary.sort_unstable();
    boundary.dedup();
    writeln!(out, "boundary {}", boundary.len()).unwrap();
    for (a, b) in boundary {
        writeln!(out, "{a} {b}").unwrap();
    }
    out
}

/// Parses the text format into a fresh forest whose roots are the listed
/// triangles.
pub fn read_mesh(text: &str) -> Result<Forest> {
    let mut cur = Cursor::new(text);
    let nv = cur.header("vertices")?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (line, f) = cur.row(2)?;
        vertices.push(Vertex::new(parse_field(f[0], line)?, parse_field(f[1], line)?));
    }
    let nt = cur.header("triangles")?;
    let mut tris = Vec::with_capacity(nt);
    for _ in 0..nt {
        let (line, f) = cur.row(4)?;
        let v = [
            parse_field(f[0], line)?,
            parse_field(f[1], line)?,
            parse_field(f[2], line)?,
        ];
        let tagged = match parse_field::<u8>(f[3], line)? {
            0 => false,
            1 => true,
            other => {
                return Err(Error::Parse {
                    line,
                    msg: format!("refinement-edge flag must be 0 or 1, found {other}"),
                })
            }
        };
        tris.push((v, tagged));
    }
    let boundary = if cur.at_end() {
        None
    } else {
        let nb = cur.header("boundary")?;
        let mut edges = Vec::with_capacity(nb);
        for _ in 0..nb {
            let (line, f) = cur.row(2)?;
            edges.push((parse_field(f[0], line)?, parse_field(f[1], line)?));
        }
        Some(edges)
    };
    Forest::from_tagged(vertices, &tris, boundary)
}

struct Cursor<'a> {
    lines: std::iter::Peekable<Box<dyn Iterator<Item = (usize, &'a str)> + 'a>>,
    last_line: usize,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str) -> Self {
        let it: Box<dyn Iterator<Item = (usize, &'a str)> + 'a> = Box::new(
            text.lines()
                .enumerate()
                .map(|(i, l)| (i + 1, l.trim()))
                .filter(|(_, l)| !l.is_empty() && !l.starts_with('#')),
        );
        Self {
            lines: it.peekable(),
            last_line: 0,
        }
    }

    fn at_end(&mut self) -> bool {
        self.lines.peek().is_none()
    }

    fn row(&mut self, width: usize) -> Result<(usize, Vec<&'a str>)> {
        let (line, l) = self.lines.next().ok_or(Error::Parse {
            line: self.last_line + 1,
            msg: "unexpected end of input".into(),
        })?;
        self.last_line = line;
        let fields: Vec<&str> = l.split_whitespace().collect();
        if fields.len() != width {
            return Err(Error::Parse {
                line,
                msg: format!("expected {width} fields, found {}", fields.len()),
            });
        }
        Ok((line, fields))
    }

    fn header(&mut self, name: &str) -> Result<usize> {
        let (line, f) = self.row(2)?;
        if f[0] != name {
            return Err(Error::Parse {
                line,
                msg: format!("expected `{name} <count>`"),
            });
        }
        parse_field(f[1], line)
    }
}

fn parse_field<T: std::str::FromStr>(s: &str, line: usize) -> Result<T> {
    s.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("cannot parse `{s}`"),
    })
}
