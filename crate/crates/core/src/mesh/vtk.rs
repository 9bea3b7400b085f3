use std::io::{self, Write};

use super::Mesh;

/// Writes the mesh as a legacy ASCII VTK unstructured grid of triangles,
/// with optional per-vertex scalar fields.
pub fn write_vtk<W: Write>(
    out: &mut W,
    mesh: &Mesh,
    title: &str,
    point_data: &[(&str, &[f64])],
) -> io::Result<()> {
    writeln!(out, "# vtk DataFile Version 2.0")?;
    writeln!(out, "{}", title.lines().next().unwrap_or(""))?;
    writeln!(out, "ASCII")?;
    writeln!(out, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(out, "POINTS {} double", mesh.num_vertices())?;
    for p in mesh.vertices() {
        writeln!(out, "{} {} 0", p[0], p[1])?;
    }
    let ne = mesh.num_elements();
    writeln!(out, "CELLS {} {}", ne, 4 * ne)?;
    for t in mesh.triangles() {
        writeln!(out, "3 {} {} {}", t[0], t[1], t[2])?;
    }
    writeln!(out, "CELL_TYPES {ne}")?;
    for _ in 0..ne {
        writeln!(out, "5")?;
    }
    if !point_data.is_empty() {
        writeln!(out, "POINT_DATA {}", mesh.num_vertices())?;
        for (name, values) in point_data {
            if values.len() != mesh.num_vertices() {
                return Err(io::Error::new(
                    io::ErrorKind::InvalidInput,
                    format!("field '{name}' has {} values for {} vertices", values.len(), mesh.num_vertices()),
                ));
            }
            writeln!(out, "SCALARS {name} double 1")?;
            writeln!(out, "LOOKUP_TABLE default")?;
            for v in *values {
                writeln!(out, "{v}")?;
            }
        }
    }
    Ok(())
}
