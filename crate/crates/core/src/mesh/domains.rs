//! Built-in initial meshes.

use super::{Forest, Vertex};

/// Unit square (0,1)^2 split by the diagonal (0,0)-(1,1) into two right
/// isosceles triangles tagged on the diagonal.
pub fn unit_square() -> Forest {
    let v = vec![
        Vertex::new(0.0, 0.0),
        Vertex::new(1.0, 0.0),
        Vertex::new(1.0, 1.0),
        Vertex::new(0.0, 1.0),
    ];
    Forest::new(v, &[[0, 1, 2], [0, 2, 3]], false, None).expect("valid built-in mesh")
}

/// L-shaped domain (-1,1)^2 \ [0,1]x[-1,0] as three unit squares, each split
/// by the diagonal through the re-entrant corner at the origin. All six
/// refinement edges end at the corner.
pub fn l_shape() -> Forest {
    let v = vec![
        Vertex::new(0.0, 0.0),   // 0 re-entrant corner
        Vertex::new(-1.0, -1.0), // 1
        Vertex::new(0.0, -1.0),  // 2
        Vertex::new(-1.0, 0.0),  // 3
        Vertex::new(-1.0, 1.0),  // 4
        Vertex::new(0.0, 1.0),   // 5
        Vertex::new(1.0, 1.0),   // 6
        Vertex::new(1.0, 0.0),   // 7
    ];
    let tris = [
        [0, 1, 2],
        [0, 3, 1],
        [0, 4, 3],
        [0, 5, 4],
        [0, 6, 5],
        [0, 7, 6],
    ];
    Forest::new(v, &tris, false, None).expect("valid built-in mesh")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_meshes_are_conforming_with_expected_area() {
        let f = unit_square();
        assert!(f.is_conforming(&f.initial()));
        assert_eq!(f.total_area(&f.initial()), 1.0);
        let f = l_shape();
        let t0 = f.initial();
        assert_eq!(t0.len(), 6);
        assert!(f.is_conforming(&t0));
        assert_eq!(f.total_area(&t0), 3.0);
        for &k in t0.leaves() {
            let (a, b) = f.triangle(k).refinement_edge();
            assert!(a == 0 || b == 0, "refinement edge must touch the corner");
        }
    }
}
