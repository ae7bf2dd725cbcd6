//! Persistence: canonical JSON for models, pools, task sets, manifests and
//! runs; CSV for datasets and reports. Saving the same object twice yields
//! identical bytes, so SHA-256 content hashes identify artifacts.

mod canonical;
mod files;
mod manifest;
mod tables;

pub use canonical::{format_float, hash_file, sha256_hex, to_canonical_json, write_atomic, write_canonical, SCHEMA_VERSION};
pub use files::{
    load_distill_run_student, load_model, load_model_checked, load_model_with_metadata, load_pool, load_tasks,
    save_distill_run, save_model, save_pool, save_tasks, FileRef, ModelMetadata, TaskEntry, TaskRole, TaskSet,
    MODEL_SCHEMA, POOL_SCHEMA, RUN_SCHEMA, TASKS_SCHEMA,
};
pub use manifest::{
    build_manifest, load_repository, model_file_name, read_manifest, relative_path, resolve, verify_manifest, write_manifest, FailedTeacher,
    ManifestEntry, RepositoryLock, RepositoryManifest, Verification, MANIFEST_FILE, MANIFEST_SCHEMA, MODELS_DIR,
};
pub use tables::{
    attach_external_metrics, export_feature_csv, ingest_feature_csv, read_external_metrics, report_csv,
    write_report_csv, IngestedDataset, REPORT_COLUMNS,
};
