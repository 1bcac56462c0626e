//! Deterministic SVG rendering of 2-D scenes.

use std::fmt::Write;

use crate::geometry::{Environment, Obstacle, WORKSPACE_MAX, WORKSPACE_MIN};
use crate::trajectory::Trajectory;

const SIZE: f64 = 600.0;

#[derive(Debug, Clone, Default)]
pub struct Scene<'a> {
    pub env: Option<&'a Environment>,
    pub candidates: Vec<&'a Trajectory>,
    pub chosen: Option<&'a Trajectory>,
    pub executed: Vec<Vec<f64>>,
    pub pursuer_path: Vec<Vec<f64>>,
    pub detection_radius: Option<f64>,
    pub start: Option<Vec<f64>>,
    pub goal: Option<Vec<f64>>,
}

fn sx(x: f64) -> f64 {
    (x - WORKSPACE_MIN) / (WORKSPACE_MAX - WORKSPACE_MIN) * SIZE
}

// y grows upward in the workspace and downward in SVG.
fn sy(y: f64) -> f64 {
    SIZE - sx(y)
}

fn scale(r: f64) -> f64 {
    r / (WORKSPACE_MAX - WORKSPACE_MIN) * SIZE
}

fn polyline(out: &mut String, pts: &[Vec<f64>], stroke: &str, width: f64, opacity: f64) {
    if pts.len() < 2 {
        return;
    }
    let coords: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", sx(p[0]), sy(p[1]))).collect();
    let _ = writeln!(
        out,
        r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="{width:.2}" stroke-opacity="{opacity:.2}"/>"#,
        coords.join(" ")
    );
}

fn dot(out: &mut String, p: &[f64], r: f64, fill: &str) {
    let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="{r:.2}" fill="{fill}"/>"#, sx(p[0]), sy(p[1]));
}

/// Renders `scene` as an SVG document. Only the first two coordinates are
/// drawn.
pub fn render(scene: &Scene) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(out, r##"<rect x="0" y="0" width="{SIZE}" height="{SIZE}" fill="#ffffff" stroke="#000000"/>"##);
    if let Some(env) = scene.env {
        for o in &env.obstacles {
            match o {
                Obstacle::Circle { center, radius } => {
                    let _ = writeln!(
                        out,
                        r##"<circle cx="{:.2}" cy="{:.2}" r="{:.2}" fill="#5a5a5a"/>"##,
                        sx(center.0[0]),
                        sy(center.0[1]),
                        scale(*radius)
                    );
                }
                Obstacle::AxisBox { min, max } => {
                    let _ = writeln!(
                        out,
                        r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#5a5a5a"/>"##,
                        sx(min.0[0]),
                        sy(max.0[1]),
                        scale(max.0[0] - min.0[0]),
                        scale(max.0[1] - min.0[1])
                    );
                }
            }
        }
    }
    for t in &scene.candidates {
        polyline(&mut out, &t.positions(), "#4a7fd0", 1.0, 0.35);
    }
    if let Some(t) = scene.chosen {
        polyline(&mut out, &t.positions(), "#1f4fa0", 2.5, 1.0);
    }
    polyline(&mut out, &scene.executed, "#e08a00", 2.5, 1.0);
    polyline(&mut out, &scene.pursuer_path, "#d02020", 2.0, 1.0);
    if let Some(p) = scene.pursuer_path.last() {
        dot(&mut out, p, 5.0, "#d02020");
        if let Some(r) = scene.detection_radius {
            let _ = writeln!(
                out,
                r##"<circle cx="{:.2}" cy="{:.2}" r="{:.2}" fill="none" stroke="#d02020" stroke-dasharray="6 4"/>"##,
                sx(p[0]),
                sy(p[1]),
                scale(r)
            );
        }
    }
    if let Some(s) = &scene.start {
        dot(&mut out, s, 7.0, "#20a040");
    }
    if let Some(g) = &scene.goal {
        dot(&mut out, g, 7.0, "#8030c0");
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_every_element_deterministically() {
        let env = Environment::new(
            "e",
            2,
            vec![Obstacle::circle(&[0.0, 0.0], 0.2), Obstacle::axis_box(&[0.4, 0.4], &[0.6, 0.5])],
            0,
        )
        .unwrap();
        let t = Trajectory::from_positions(2, &[vec![-0.8, -0.8], vec![0.0, 0.5], vec![0.8, 0.8]], 0.1);
        let scene = Scene {
            env: Some(&env),
            candidates: vec![&t],
            chosen: Some(&t),
            executed: vec![vec![-0.8, -0.8], vec![-0.7, -0.7]],
            pursuer_path: vec![vec![0.5, -0.5], vec![0.4, -0.4]],
            detection_radius: Some(0.4),
            start: Some(vec![-0.8, -0.8]),
            goal: Some(vec![0.8, 0.8]),
        };
        let a = render(&scene);
        assert_eq!(a, render(&scene));
        assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
        assert!(a.contains(r##"fill="#20a040""##) && a.contains(r##"fill="#8030c0""##));
        assert!(a.contains("stroke-dasharray"));
        // Circle of radius 0.2 at the origin maps to the canvas centre.
        assert!(a.contains(r#"<circle cx="300.00" cy="300.00" r="60.00""#));
        assert_eq!(a.matches("<polyline").count(), 4);
    }
}
