use std::fs::{self, File};
use std::io;
use std::path::{Path, PathBuf};

use flate2::Compression;
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;

/// Every file below `dir`, sorted.
pub fn files_under(dir: &Path) -> io::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Writes every file under `dir` into a gzip-compressed tar at `archive`,
/// with paths relative to `dir`, in sorted order. The archive is replaced
/// atomically.
pub fn pack(dir: &Path, archive: &Path) -> io::Result<()> {
    let parent = archive.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let tmp = tempfile::NamedTempFile::new_in(parent)?;
    {
        let encoder = GzEncoder::new(tmp.as_file(), Compression::default());
        let mut builder = tar::Builder::new(encoder);
        builder.mode(tar::HeaderMode::Deterministic);
        for file in files_under(dir)? {
            let name = file.strip_prefix(dir).expect("walked from dir");
            builder.append_path_with_name(&file, name)?;
        }
        builder.into_inner()?.finish()?;
    }
    tmp.persist(archive).map_err(|e| e.error)?;
    Ok(())
}

/// Extracts `archive` into `dest`, creating it if needed.
pub fn unpack(archive: &Path, dest: &Path) -> io::Result<()> {
    fs::create_dir_all(dest)?;
    let mut tar = tar::Archive::new(GzDecoder::new(File::open(archive)?));
    tar.unpack(dest)
}
