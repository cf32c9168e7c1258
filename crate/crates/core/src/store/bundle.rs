use std::fs::{self, File};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use zip::write::SimpleFileOptions;
use zip::{CompressionMethod, ZipArchive, ZipWriter};

use super::service::SLIDE_SUBDIRS;
use super::{SlideRow, Store, StoreError, StructuredReport};
use crate::analysis::AnalysisTask;
use crate::annotation::{replay, AnnotationRecord, Edit};

pub const BUNDLE_FORMAT: &str = "pimip-bundle/1";

const MANIFEST: &str = "manifest";
const ANNOTATIONS: &str = "annotations.ndtext";
const REPORT: &str = "report";
const RESULTS: &str = "results";
const PYRAMID: &str = "pyramid";

#[derive(Debug, Serialize, Deserialize)]
struct BundleManifest {
    format: String,
    slide: SlideRow,
    tasks: Vec<AnalysisTask>,
    annotation_count: usize,
    has_pyramid: bool,
    exported_at: i64,
}

#[derive(Debug, Serialize, Deserialize)]
struct AnnotationLine {
    record: AnnotationRecord,
    edits: Vec<Edit>,
}

fn bad(m: impl Into<String>) -> StoreError {
    StoreError::MalformedBundle(m.into())
}

fn zip_err(e: zip::result::ZipError) -> StoreError {
    match e {
        zip::result::ZipError::Io(e) => StoreError::Io(e),
        other => bad(other.to_string()),
    }
}

/// Files under `dir`, as paths relative to it, sorted.
fn walk(dir: &Path) -> Result<Vec<PathBuf>, StoreError> {
    let mut out = Vec::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d)? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).expect("under dir").to_path_buf());
            }
        }
    }
    out.sort();
    Ok(out)
}

fn entry_name(prefix: &str, rel: &Path) -> String {
    let parts: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
    format!("{prefix}/{}", parts.join("/"))
}

impl Store {
    /// Write the slide's annotations with their edit logs, report,
    /// result artifacts and pyramid to a zip archive at `out`.
    pub fn export_slide_bundle(&self, slide_id: &str, out: &Path) -> Result<PathBuf, StoreError> {
        let slide = self.slide(slide_id)?;
        let records = self.repository().list_annotations(slide_id)?;
        let tasks = self.list_tasks(Some(slide_id))?;
        let report = self.report(slide_id)?;
        let pyramid = self.pyramid_dir(slide_id);
        let manifest = BundleManifest {
            format: BUNDLE_FORMAT.to_owned(),
            slide,
            tasks,
            annotation_count: records.len(),
            has_pyramid: pyramid.is_dir(),
            exported_at: crate::now_millis(),
        };

        let partial = out.with_extension("partial");
        let deflate = SimpleFileOptions::default().compression_method(CompressionMethod::Deflated);
        let stored = SimpleFileOptions::default()
            .compression_method(CompressionMethod::Stored)
            .large_file(true);
        let write = || -> Result<(), StoreError> {
            let mut zw = ZipWriter::new(File::create(&partial)?);
            zw.start_file(MANIFEST, deflate).map_err(zip_err)?;
            zw.write_all(&serde_json::to_vec_pretty(&manifest)?)?;
            zw.start_file(ANNOTATIONS, deflate).map_err(zip_err)?;
            for r in records {
                let edits = self.repository().edits(&r.id)?;
                serde_json::to_writer(&mut zw, &AnnotationLine { record: r, edits })?;
                zw.write_all(b"\n")?;
            }
            zw.start_file(REPORT, deflate).map_err(zip_err)?;
            zw.write_all(&serde_json::to_vec_pretty(&report)?)?;
            let results = self.slide_dir(slide_id).join(RESULTS);
            for rel in walk(&results)? {
                zw.start_file(entry_name(RESULTS, &rel), deflate).map_err(zip_err)?;
                std::io::copy(&mut File::open(results.join(&rel))?, &mut zw)?;
            }
            for rel in walk(&pyramid)? {
                zw.start_file(entry_name(PYRAMID, &rel), stored).map_err(zip_err)?;
                std::io::copy(&mut File::open(pyramid.join(&rel))?, &mut zw)?;
            }
            zw.finish().map_err(zip_err)?.sync_all()?;
            Ok(())
        };
        if let Err(e) = write() {
            let _ = fs::remove_file(&partial);
            return Err(e);
        }
        fs::rename(&partial, out)?;
        Ok(out.to_path_buf())
    }

    /// Recreate a slide from an exported bundle. The slide id must be
    /// free in this store.
    pub fn import_slide_bundle(&self, bundle: &Path) -> Result<SlideRow, StoreError> {
        let mut zip = ZipArchive::new(File::open(bundle)?).map_err(zip_err)?;
        let manifest: BundleManifest = {
            let entry = zip.by_name(MANIFEST).map_err(|_| bad("missing manifest"))?;
            serde_json::from_reader(entry).map_err(|e| bad(format!("manifest: {e}")))?
        };
        if manifest.format != BUNDLE_FORMAT {
            return Err(bad(format!("unsupported format `{}`", manifest.format)));
        }
        let mut slide = manifest.slide;
        if !super::is_valid_slide_id(&slide.slide_id) {
            return Err(StoreError::InvalidSlideId(slide.slide_id));
        }
        if self.repository().get_slide(&slide.slide_id)?.is_some() {
            return Err(StoreError::DuplicateSlideId(slide.slide_id));
        }
        let mut lines = Vec::new();
        {
            let entry = zip.by_name(ANNOTATIONS).map_err(|_| bad("missing annotations"))?;
            for (n, line) in BufReader::new(entry).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let a: AnnotationLine =
                    serde_json::from_str(&line).map_err(|e| bad(format!("annotation line {}: {e}", n + 1)))?;
                let state = replay(&a.edits)?;
                if state.record != a.record || a.record.slide_id != slide.slide_id {
                    return Err(bad(format!("annotation `{}` disagrees with its edit log", a.record.id)));
                }
                lines.push(a);
            }
        }
        if lines.len() != manifest.annotation_count {
            return Err(bad("annotation count mismatch"));
        }
        let report: Option<StructuredReport> = {
            let entry = zip.by_name(REPORT).map_err(|_| bad("missing report"))?;
            serde_json::from_reader(entry).map_err(|e| bad(format!("report: {e}")))?
        };
        if report.as_ref().is_some_and(|r| r.slide_id != slide.slide_id) {
            return Err(bad("report belongs to another slide"));
        }

        // Unpack files into a staging folder, then move it into place.
        let slides = self.data_dir().join("slides");
        fs::create_dir_all(&slides)?;
        let staging = slides.join(format!(".{}.importing-{}", slide.slide_id, std::process::id()));
        if staging.exists() {
            fs::remove_dir_all(&staging)?;
        }
        let unpack = |zip: &mut ZipArchive<File>| -> Result<(), StoreError> {
            for sub in SLIDE_SUBDIRS {
                fs::create_dir_all(staging.join(sub))?;
            }
            for i in 0..zip.len() {
                let mut entry = zip.by_index(i).map_err(zip_err)?;
                if entry.is_dir() {
                    continue;
                }
                let rel = entry.enclosed_name().ok_or_else(|| bad("unsafe entry name"))?;
                let top = rel.components().next().map(|c| c.as_os_str().to_string_lossy().into_owned());
                match top.as_deref() {
                    Some(RESULTS) | Some(PYRAMID) => {}
                    _ => continue,
                }
                let dest = staging.join(&rel);
                fs::create_dir_all(dest.parent().expect("entry has a parent"))?;
                let mut buf = Vec::new();
                entry.read_to_end(&mut buf)?;
                fs::write(dest, buf)?;
            }
            Ok(())
        };
        if let Err(e) = unpack(&mut zip) {
            let _ = fs::remove_dir_all(&staging);
            return Err(e);
        }
        let dir = self.slide_dir(&slide.slide_id);
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::rename(&staging, &dir)?;
        if manifest.has_pyramid {
            slide.source_path = self.pyramid_dir(&slide.slide_id).display().to_string();
        }

        let load = || -> Result<(), StoreError> {
            self.repository().insert_slide(&slide)?;
            for a in &lines {
                self.restore_log(&a.edits)?;
            }
            for t in &manifest.tasks {
                if t.slide_id != slide.slide_id {
                    return Err(bad(format!("task `{}` belongs to another slide", t.id)));
                }
                self.repository().insert_task(t)?;
            }
            if let Some(r) = &report {
                self.repository().put_report(r)?;
            }
            Ok(())
        };
        if let Err(e) = load() {
            let _ = self.repository().delete_slide(&slide.slide_id);
            let _ = fs::remove_dir_all(&dir);
            return Err(e);
        }
        Ok(slide)
    }
}
