use facrig_core::io::jfld::{read_jfld, write_jfld};
use facrig_core::io::{read_mesh, read_mesh_bytes, write_mesh};
use facrig_core::{build_synthetic_rig, GradientOperator, TriangleMesh};

fn face() -> TriangleMesh<f64> {
    build_synthetic_rig(1, 600).unwrap().template
}

#[test]
fn mesh_files_round_trip_by_extension() {
    let m = face();
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.ply", "b.obj", "c.PLY"] {
        let path = dir.path().join(name);
        write_mesh(&path, &m).unwrap();
        let back: TriangleMesh<f64> = read_mesh(&path).unwrap();
        assert_eq!(back.triangles(), m.triangles());
        for (p, q) in back.vertices().iter().zip(m.vertices()) {
            for c in 0..3 {
                assert!((p[c] - q[c]).abs() < 1e-4, "{name}");
            }
        }
    }
}

#[test]
fn format_is_sniffed_from_content() {
    let m = face();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mesh.bin");
    write_mesh(&path, &m).unwrap();
    let back: TriangleMesh<f32> = read_mesh(&path).unwrap();
    assert_eq!(back.vertex_count(), m.vertex_count());
    let obj = facrig_core::io::obj::write_obj(&m);
    let back: TriangleMesh<f64> = read_mesh_bytes(obj.as_bytes()).unwrap();
    assert_eq!(back.triangle_count(), m.triangle_count());
    assert!(read_mesh_bytes::<f64>(&[0xff, 0xfe, 0x00]).is_err());
}

#[test]
fn missing_file_is_an_io_error() {
    let err = read_mesh::<f64>("/nonexistent/mesh.ply").unwrap_err();
    assert!(matches!(err, facrig_core::Error::Io(_)));
}

#[test]
fn jacobian_fields_stream_in_chunks() {
    let m = face();
    let op = GradientOperator::build(&m).unwrap();
    let bent = m.transformed(&[[1.1, 0.2, 0.0], [0.0, 0.9, 0.0], [0.0, 0.0, 1.0]], [0.0; 3]);
    let j = op.compute_jacobians(&bent).unwrap();
    let small = write_jfld(&j, 100);
    let big = write_jfld(&j, 1 << 20);
    assert!(small.len() > big.len());
    let a: facrig_core::JacobianField<f64> = read_jfld(&small).unwrap();
    let b: facrig_core::JacobianField<f64> = read_jfld(&big).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), m.triangle_count());
}
