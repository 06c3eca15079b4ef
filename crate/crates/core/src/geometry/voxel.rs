use super::{GeometryError, Point3, PointCloud, Vec3};

/// Integer voxel coordinates; boundary points go to `floor(c / size)`.
pub fn voxel_key(p: &Point3, size: f64) -> [i64; 3] {
    [
        (p.x / size).floor() as i64,
        (p.y / size).floor() as i64,
        (p.z / size).floor() as i64,
    ]
}

/// Replaces the points of every occupied voxel by their centroid.
///
/// Voxels are emitted in ascending key order and members are summed in a
/// canonical order, so the output does not depend on the input order.
/// Intensity is averaged, the time index keeps the newest member and the
/// per-point source keeps the smallest node id.
pub fn voxel_downsample(cloud: &PointCloud, voxel_size: f64) -> Result<PointCloud, GeometryError> {
    if !(voxel_size > 0.0) || !voxel_size.is_finite() {
        return Err(GeometryError::InvalidArgument(format!(
            "voxel size must be positive, got {voxel_size}"
        )));
    }
    let mut order: Vec<([i64; 3], usize)> = cloud
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| (voxel_key(p, voxel_size), i))
        .collect();
    order.sort_unstable_by(|(ka, ia), (kb, ib)| {
        ka.cmp(kb).then_with(|| canonical_cmp(cloud, *ia, *ib))
    });

    let mut out = PointCloud {
        timestamp_ns: cloud.timestamp_ns,
        source_node: cloud.source_node,
        ..PointCloud::default()
    };
    let mut start = 0;
    while start < order.len() {
        let key = order[start].0;
        let mut end = start;
        while end < order.len() && order[end].0 == key {
            end += 1;
        }
        let members = &order[start..end];
        let sum = members.iter().fold(Vec3::zeros(), |acc, (_, i)| acc + cloud.points[*i].coords);
        out.points.push(Point3::from(sum / members.len() as f64));
        if cloud.has_intensity() {
            let total: f64 = members.iter().map(|(_, i)| cloud.intensity[*i] as f64).sum();
            out.intensity.push((total / members.len() as f64) as f32);
        }
        if cloud.has_time_index() {
            out.time_index.push(members.iter().map(|(_, i)| cloud.time_index[*i]).max().unwrap_or(0));
        }
        if cloud.has_point_source() {
            out.point_source.push(members.iter().map(|(_, i)| cloud.point_source[*i]).min().unwrap_or(0));
        }
        start = end;
    }
    Ok(out)
}

fn canonical_cmp(cloud: &PointCloud, a: usize, b: usize) -> std::cmp::Ordering {
    let (pa, pb) = (&cloud.points[a], &cloud.points[b]);
    let mut ord = pa
        .x
        .total_cmp(&pb.x)
        .then(pa.y.total_cmp(&pb.y))
        .then(pa.z.total_cmp(&pb.z));
    if cloud.has_intensity() {
        ord = ord.then(cloud.intensity[a].total_cmp(&cloud.intensity[b]));
    }
    ord
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_in_empty_out() {
        assert!(voxel_downsample(&PointCloud::default(), 1.0).unwrap().is_empty());
    }

    #[test]
    fn centroid_of_one_voxel() {
        let cloud = PointCloud::from_points(vec![Point3::new(0.0, 0.0, 0.0), Point3::new(0.1, 0.0, 0.0)]);
        let out = voxel_downsample(&cloud, 1.0).unwrap();
        assert_eq!(out.len(), 1);
        assert!((out.points[0] - Point3::new(0.05, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn rejects_non_positive_size() {
        assert!(voxel_downsample(&PointCloud::default(), 0.0).is_err());
        assert!(voxel_downsample(&PointCloud::default(), -1.0).is_err());
    }

    #[test]
    fn output_points_occupy_distinct_voxels() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Point3> = (0..1000)
            .map(|_| Point3::new(rng.random_range(0.0..10.0), rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)))
            .collect();
        let out = voxel_downsample(&PointCloud::from_points(pts), 0.2).unwrap();
        let keys: Vec<[i64; 3]> = out.points.iter().map(|p| voxel_key(p, 0.2)).collect();
        // Brute force: no two outputs share a key.
        for i in 0..keys.len() {
            for j in (i + 1)..keys.len() {
                assert_ne!(keys[i], keys[j]);
            }
        }
        assert!(out.len() <= 1000);
    }

    #[test]
    fn averages_attributes() {
        let mut cloud = PointCloud::from_points(vec![Point3::new(0.1, 0.1, 0.1), Point3::new(0.2, 0.2, 0.2)]);
        cloud.intensity = vec![1.0, 3.0];
        cloud.time_index = vec![0, 2];
        cloud.point_source = vec![3, 1];
        let out = voxel_downsample(&cloud, 1.0).unwrap();
        assert_eq!(out.intensity, vec![2.0]);
        assert_eq!(out.time_index, vec![2]);
        assert_eq!(out.point_source, vec![1]);
    }

    proptest! {
        #[test]
        fn permutation_invariant(seed in 0u64..1000, size in 0.05..2.0f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<Point3> = (0..300)
                .map(|_| Point3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-1.0..1.0)))
                .collect();
            let mut shuffled = pts.clone();
            for i in (1..shuffled.len()).rev() {
                let j = rng.random_range(0..=i);
                shuffled.swap(i, j);
            }
            let a = voxel_downsample(&PointCloud::from_points(pts), size).unwrap();
            let b = voxel_downsample(&PointCloud::from_points(shuffled), size).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
