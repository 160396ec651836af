//! Closed-form parameter accounting, computed from the architecture alone
//! (no network is built), so it can cross-check the built registries.

use std::fmt::Write as _;

use super::arch::{ArchSpec, Role, Variant};
use super::error::ModelError;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerCount {
    pub name: String,
    pub shape: Vec<usize>,
    pub count: usize,
    /// Number of timesteps this tensor is applied at (1 for untied layers).
    pub shared_by: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamCount {
    pub total: usize,
    pub by_layer: Vec<LayerCount>,
}

impl ParamCount {
    /// Scalars held by convolution kernels.
    pub fn conv_scalars(&self) -> usize {
        self.by_layer
            .iter()
            .filter(|l| l.shape.len() == 4)
            .map(|l| l.count)
            .sum()
    }

    /// Plain-text table: layer, shape, count, timesteps sharing it.
    pub fn to_table(&self) -> String {
        let width = self.by_layer.iter().map(|l| l.name.len()).max().unwrap_or(5).max(5);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:<16}  {:>9}  {:>6}", "layer", "shape", "count", "shared");
        for l in &self.by_layer {
            let _ = writeln!(
                out,
                "{:<width$}  {:<16}  {:>9}  {:>6}",
                l.name,
                format_shape(&l.shape),
                l.count,
                l.shared_by
            );
        }
        let _ = writeln!(out, "{:<width$}  {:<16}  {:>9}", "total", "", self.total);
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| layer | shape | count | shared by |\n|---|---|---:|---:|\n");
        for l in &self.by_layer {
            let _ = writeln!(out, "| {} | {} | {} | {} |", l.name, format_shape(&l.shape), l.count, l.shared_by);
        }
        let _ = writeln!(out, "| **total** | | **{}** | |", self.total);
        out
    }
}

fn format_shape(shape: &[usize]) -> String {
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

/// Applications of each unit in one group, in unit order (A, then B).
pub fn unit_uses(variant: Variant, n: usize) -> Vec<usize> {
    match variant {
        Variant::ReResNet1 => vec![n + 1, n],
        Variant::ReResNet2 => vec![n, n],
        Variant::ReResNet3 => vec![n],
    }
}

struct Acc(Vec<LayerCount>);

impl Acc {
    fn push(&mut self, name: String, shape: &[usize], shared_by: usize) {
        self.0.push(LayerCount {
            name,
            shape: shape.to_vec(),
            count: shape.iter().product(),
            shared_by,
        });
    }

    fn bn(&mut self, prefix: &str, channels: usize) {
        self.push(format!("{prefix}.gamma"), &[channels], 1);
        self.push(format!("{prefix}.beta"), &[channels], 1);
    }
}

/// Trainable scalars of `arch`, including every per-timestep BN affine pair.
/// BN running statistics are not trainable and are not counted.
pub fn count_parameters(arch: &ArchSpec) -> Result<ParamCount, ModelError> {
    arch.validate()?;
    let mut acc = Acc(Vec::new());
    acc.push("stem.conv".into(), &[arch.stem_channels, arch.in_channels, 3, 3], 1);
    match arch.role {
        Role::Student => {
            let uses = unit_uses(arch.variant, arch.recurrence);
            for (g, &w) in arch.group_widths.iter().enumerate() {
                let group = g + 1;
                if g > 0 {
                    let prev = arch.group_widths[g - 1];
                    acc.bn(&format!("t{group}.bn"), prev);
                    acc.push(format!("t{group}.conv"), &[w, prev, 3, 3], 1);
                }
                for (u, &k) in uses.iter().enumerate() {
                    let unit = format!("g{group}.{}", if u == 0 { 'A' } else { 'B' });
                    acc.push(format!("{unit}.conv"), &[w, w, 3, 3], k);
                    for bank in 0..k {
                        acc.bn(&format!("{unit}.bn{bank}"), w);
                    }
                }
            }
        }
        Role::Teacher => {
            let mut c_in = arch.stem_channels;
            for (g, &w) in arch.group_widths.iter().enumerate() {
                for b in 0..arch.blocks_per_group {
                    let name = format!("g{}.b{}", g + 1, b + 1);
                    let stride = if b == 0 && g > 0 { 2 } else { 1 };
                    acc.bn(&format!("{name}.bn1"), c_in);
                    acc.push(format!("{name}.conv1"), &[w, c_in, 3, 3], 1);
                    acc.bn(&format!("{name}.bn2"), w);
                    acc.push(format!("{name}.conv2"), &[w, w, 3, 3], 1);
                    if c_in != w || stride != 1 {
                        acc.push(format!("{name}.shortcut"), &[w, c_in, 1, 1], 1);
                    }
                    c_in = w;
                }
            }
        }
    }
    let last = *arch.group_widths.last().expect("validated");
    acc.bn("head.bn", last);
    acc.push("head.fc.weight".into(), &[last, arch.num_classes], 1);
    acc.push("head.fc.bias".into(), &[arch.num_classes], 1);
    let total = acc.0.iter().map(|l| l.count).sum();
    Ok(ParamCount { total, by_layer: acc.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn student(v: Variant, n: usize) -> ParamCount {
        count_parameters(&ArchSpec::student(v, n, 10)).unwrap()
    }

    #[test]
    fn reresnet3_conv_and_head_scalars() {
        let c = student(Variant::ReResNet3, 3);
        // stem 432 + units 9·(16²+32²+64²) + transitions 4,608 + 18,432
        assert_eq!(c.conv_scalars(), 432 + 48_384 + 4_608 + 18_432);
        // + linear head 64·10 + 10
        assert_eq!(c.conv_scalars() + 650, 72_506);
    }

    #[test]
    fn reresnet3_grows_by_one_bn_pair_per_group() {
        for n in 1..8 {
            let d = student(Variant::ReResNet3, n + 1).total - student(Variant::ReResNet3, n).total;
            assert_eq!(d, 2 * (16 + 32 + 64));
        }
    }

    #[test]
    fn conv_scalars_independent_of_recurrence() {
        for v in Variant::ALL {
            let base = student(v, 1).conv_scalars();
            for n in 2..=12 {
                assert_eq!(student(v, n).conv_scalars(), base, "{v} n={n}");
            }
        }
    }

    #[test]
    fn two_unit_variants_add_one_kernel_per_group() {
        let one = student(Variant::ReResNet1, 3).conv_scalars();
        let two = student(Variant::ReResNet2, 3).conv_scalars();
        let three = student(Variant::ReResNet3, 3).conv_scalars();
        assert_eq!(one, two);
        assert_eq!(one - three, 2_304 + 9_216 + 36_864);
    }

    #[test]
    fn published_student_totals() {
        let near = |v, n, target: f64, tol: f64| {
            let t = student(v, n).total as f64;
            assert!((t - target).abs() <= tol, "{v} n={n}: {t}");
        };
        near(Variant::ReResNet3, 3, 73_000.0, 1_000.0);
        near(Variant::ReResNet1, 3, 122_000.0, 1_500.0);
        near(Variant::ReResNet1, 6, 124_000.0, 1_500.0);
    }

    #[test]
    fn teacher_layout_has_projection_only_on_downsampling_blocks() {
        let c = count_parameters(&ArchSpec::teacher(3, 10)).unwrap();
        let shortcuts: Vec<_> = c.by_layer.iter().filter(|l| l.name.ends_with("shortcut")).collect();
        assert_eq!(shortcuts.len(), 2);
        assert_eq!(shortcuts[0].shape, vec![64, 32, 1, 1]);
        assert_eq!(c.conv_scalars(), 1_080_160);
    }

    #[test]
    fn markdown_total_matches() {
        let c = student(Variant::ReResNet2, 6);
        assert!(c.to_markdown().contains(&format!("**{}**", c.total)));
        assert!(c.to_table().lines().last().unwrap().contains(&c.total.to_string()));
    }
}
