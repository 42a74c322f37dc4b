//! Euler conversion, geodesic distance and the 6D rotation representation.

use headpose::so3::{
    euler_to_rotation, geodesic_distance, gram_schmidt_6d, rotation_to_euler, sphere_project, Axis, EulerAngles,
    RotationMatrix, SixDRep,
};

fn main() -> headpose::Result<()> {
    let a = euler_to_rotation(&EulerAngles::from_degrees(30.0, -10.0, 5.0))?;
    let b = euler_to_rotation(&EulerAngles::from_degrees(-150.0, 20.0, 170.0))?;
    let back = rotation_to_euler(&a).to_degrees();
    println!("round trip (yaw, pitch, roll) = ({:.3}, {:.3}, {:.3})", back[0], back[1], back[2]);
    println!("d(A, B) = {:.3} deg", geodesic_distance(&a, &b).to_degrees());
    println!("d(A, I) = {:.3} deg", geodesic_distance(&a, &RotationMatrix::IDENTITY).to_degrees());

    let r = gram_schmidt_6d(&SixDRep([2.0, 0.1, 0.0, 0.3, 1.5, 0.2]))?;
    println!("6D -> rotation:\n{:?}", r.matrix());
    for axis in [Axis::X, Axis::Y, Axis::Z] {
        println!("sphere point of A on {axis:?}: {:?}", sphere_project(&a, axis));
    }
    Ok(())
}
