from pathlib import Path

def census_path(out_dir: Path) -> Path:
    return out_dir / "census.json"

def rotated_structures_path(out_dir: Path) -> Path:
    return out_dir / "rotated.xyz"

def scaled_structures_path(out_dir: Path) -> Path:
    return out_dir / "scaled.xyz"

def detection_path(out_dir: Path) -> Path:
    return out_dir / "detect.json"

def timeline_csv_path(out_dir: Path) -> Path:
    return out_dir / "timeline.csv"

def occurrence_path(out_dir: Path) -> Path:
    return out_dir / "occurrence.json"

def persistence_path(out_dir: Path) -> Path:
    return out_dir / "persistence.json"

def phase_summary_path(out_dir: Path) -> Path:
    return out_dir / "high_symmetry_phase.json"

def average_xyz_path(out_dir: Path) -> Path:
    return out_dir / "average.xyz"

def average_summary_path(out_dir: Path) -> Path:
    return out_dir / "average.json"

def pca_eigen_csv_path(out_dir: Path) -> Path:
    return out_dir / "pca_eigenvalues.csv"

def pca_mean_xyz_path(out_dir: Path) -> Path:
    return out_dir / "pca_mean.xyz"

def pca_mode_csv_path(out_dir: Path, mode: int) -> Path:
    return out_dir / f"pca_mode_{mode}.csv"

def pca_projections_csv_path(out_dir: Path) -> Path:
    return out_dir / "pca_projections.csv"

def pca_summary_path(out_dir: Path) -> Path:
    return out_dir / "pca.json"

def assignments_csv_path(out_dir: Path) -> Path:
    return out_dir / "cluster_assignments.csv"

def centroid_xyz_path(out_dir: Path, cluster: int) -> Path:
    return out_dir / f"cluster_centroid_{cluster}.xyz"

def clusters_summary_path(out_dir: Path) -> Path:
    return out_dir / "clusters.json"

def energy_stats_path(out_dir: Path) -> Path:
    return out_dir / "energy_stats.json"

def s6min_params_path(out_dir: Path) -> Path:
    return out_dir / "s6min.json"

def s6min_xyz_path(out_dir: Path) -> Path:
    return out_dir / "s6min.xyz"

def report_path(run_dir: Path) -> Path:
    return run_dir / "report.json"

def report_schema_path(run_dir: Path) -> Path:
    return run_dir / "report.schema.json"
