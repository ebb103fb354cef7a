"""Synthetic corpus generator: three revision snapshots of ~55 packages.

The corpus bakes in every fixture the audit needs: a nano-style package
built from a fetched source, a multi-output ncurses, a five-deep dependency
chain, two impure packages (version stamp and shell flavor), sandbox-leakage
probes for both the current and the past leakage classes, a controllably
flaky package, a dotted-name job, and a platform-filtered attribute.

The flaky package's failure schedule is driven by the builder seed, which is
a function of (derivation digest, execution serial).  `find_flaky_salt`
searches for an env salt such that the first execution passes (the CI
build), the second fails (the audit rebuild), and at least one of the next
three passes (the flakiness probe).
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass

from mfpm import archive
from mfpm.archive import FileNode
from mfpm.drv import HashModulo, drv_file_path, fill_output_paths, make_derivation
from mfpm.paths import StorePath

REV_TIMESTAMPS = {"rev1": 1483228800, "rev2": 1484092800, "rev3": 1484956800}

NANO_URL = "mirror://gnu/nano/nano-7.2.tar.xz"
NCURSES_URL = "mirror://gnu/ncurses/ncurses-6.4.tar.gz"

NANO_SOURCE = "nano source archive\nrelease 7.2\n"
NCURSES_SOURCE = "ncurses source archive\nrelease 6.4\n"

FETCH_MARKER = "# fetch-impl v1"

FETCH_SCRIPT = f"""\
#!/bin/sh
{FETCH_MARKER}
if [ -z "$MFPM_SOURCE_MIRROR" ]; then
  echo "fetch: no source mirror available"
  exit 1
fi
src="$MFPM_SOURCE_MIRROR/$urlSha256"
if [ ! -f "$src" ]; then
  echo "fetch: $url not present in mirror"
  exit 1
fi
while IFS= read -r line; do
  printf '%s\\n' "$line"
done < "$src" > "$out"
if [ -n "$line" ]; then
  printf '%s' "$line" >> "$out"
fi
exit 0
"""

BUILD_SCRIPT = """\
#!/bin/sh
{
  printf 'package %s\\n' "$name"
  printf 'inputs %s\\n' "$buildInputs"
  printf 'flags %s\\n' "$configureFlags"
  printf 'source %s\\n' "$src"
  printf 'stamp %s\\n' "$stamp"
  printf 'mode %s\\n' "$mode"
} > "$out"
"""

MULTI_SCRIPT = """\
#!/bin/sh
printf 'ncurses runtime %s\\n' "$name" > "$out"
printf 'ncurses headers %s\\nsource %s\\n' "$name" "$src" > "$dev"
"""

DUMP_SCRIPT = """\
#!/bin/sh
export -p > "$out"
"""

LEAKY_CURRENT_SCRIPT = """\
#!/bin/sh
if [ -z "$OS_NAME" ]; then
  echo "REJECT-HOST-INFO: OS_NAME"
  echo "cannot verify the host operating system; refusing to build"
  exit 1
fi
printf 'host os check passed\\n' > "$out"
"""

LEAKY_PAST_SCRIPT = """\
#!/bin/sh
if [ -z "$KERNEL_VERSION" ]; then
  echo "MISSING-ENV:KERNEL_VERSION"
  exit 1
fi
printf 'kernel check recorded\\n' > "$out"
"""

FLAKY_SCRIPT = """\
#!/bin/sh
read -r seed < ./.build-seed
if [ "$seed" -ge 200 ]; then
  echo "test suite failed (seed $seed)"
  exit 1
fi
printf 'flaky build ok (salt %s)\\n' "$salt" > "$out"
"""

FLAKY_NAME = "flaky-one-1.0"


@dataclass(frozen=True)
class Corpus:
    revisions_root: str  # contains rev1/ rev2/ rev3/ and revisions.tsv
    mirror: str
    flaky_salt: int
    job_counts: dict  # revision dirname -> expected job count


def _recipe_str(text: str) -> str:
    escaped = text.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n").replace("$", "\\$")
    return f'"{escaped}"'


def _seed(drv_digest: str, serial: int) -> int:
    return hashlib.sha256(f"seed:{drv_digest}:{serial}".encode("ascii")).digest()[0]


def flaky_drv_digest(salt: int) -> str:
    """Derivation digest the evaluator will assign to the flaky package."""
    script_name = f"{FLAKY_NAME}-builder.sh"
    payload = archive.encode(FileNode(FLAKY_SCRIPT.encode("utf-8"), executable=True))
    script_path = StorePath.for_content(f"source:{script_name}:", script_name, payload)
    drv = make_derivation(
        name=FLAKY_NAME,
        builder=script_path.render(),
        env={"name": FLAKY_NAME, "salt": str(salt)},
        input_srcs=[script_path.render()],
    )
    filled = fill_output_paths(drv, HashModulo(lambda p: (_ for _ in ()).throw(KeyError(p))))
    return drv_file_path(filled).digest


def find_flaky_salt() -> int:
    """First salt whose seed schedule is pass, fail, then a pass within 3."""
    for salt in range(100000):
        digest = flaky_drv_digest(salt)
        seeds = [_seed(digest, n) for n in range(5)]
        if seeds[0] < 200 and seeds[1] >= 200 and any(s < 200 for s in seeds[2:5]):
            return salt
    raise RuntimeError("no usable flaky salt found")


def _revision_source(rev: int, nano_sha: str, ncurses_sha: str, flaky_salt: int) -> str:
    chain_a_version = "1.0" if rev < 2 else "1.1"
    nano_flags = '[ "--sysconfdir=/etc" ]' if rev < 3 else '[ "--sysconfdir=/etc" "--enable-utf8" ]'

    filler_count = 40 if rev < 3 else 41
    filler_lets = []
    filler_attrs = []
    for i in range(filler_count):
        deps = []
        if i % 5 != 0:
            deps.append(f"pkg{i - 1:02d}")
        if i % 9 == 0:
            deps.append("ncursesPkg")
        if i % 11 == 7:
            deps.append("chainC")
        dep_expr = " ".join(deps)
        filler_lets.append(f'  pkg{i:02d} = simple {{ name = "pkg{i:02d}-1.0"; deps = [ {dep_expr} ]; }};')
        filler_attrs.append(f"  pkg{i:02d} = pkg{i:02d};")

    lines = []
    lines.append("let")
    lines.append(f"  fetchScript = {_recipe_str(FETCH_SCRIPT)};")
    lines.append(f"  buildScript = {_recipe_str(BUILD_SCRIPT)};")
    lines.append(f"  multiScript = {_recipe_str(MULTI_SCRIPT)};")
    lines.append(f"  dumpScript = {_recipe_str(DUMP_SCRIPT)};")
    lines.append(f"  leakyCurrentScript = {_recipe_str(LEAKY_CURRENT_SCRIPT)};")
    lines.append(f"  leakyPastScript = {_recipe_str(LEAKY_PAST_SCRIPT)};")
    lines.append(f"  flakyScript = {_recipe_str(FLAKY_SCRIPT)};")
    lines.append("""
  simple = { name, deps }: derivation {
    name = name;
    builderScript = buildScript;
    buildInputs = deps;
  };

  stdenv = {
    mkDerivation = { pname, version, src, buildInputs, configureFlags }: derivation {
      name = "${pname}-${version}";
      builderScript = buildScript;
      pname = pname;
      version = version;
      src = src;
      buildInputs = buildInputs;
      configureFlags = configureFlags;
    };
  };

  nanoFn = { stdenv, fetchFile, ncurses }:
    stdenv.mkDerivation rec {
      pname = "nano";
      version = "7.2";
      src = fetchFile {
        url = "mirror://gnu/nano/${pname}-${version}.tar.xz";
        sha256 = "%NANO_SHA%";
        script = fetchScript;
      };
      buildInputs = [ ncurses.dev ];
      configureFlags = %NANO_FLAGS%;
    };

  ncursesPkg = derivation {
    name = "ncurses-6.4";
    builderScript = multiScript;
    outputs = [ "out" "dev" ];
    src = fetchFile {
      url = "%NCURSES_URL%";
      sha256 = "%NCURSES_SHA%";
      script = fetchScript;
    };
  };

  chainA = simple { name = "chain-a-%CHAIN_A_VERSION%"; deps = [ ]; };
  chainB = simple { name = "chain-b-1.0"; deps = [ chainA ]; };
  chainC = simple { name = "chain-c-1.0"; deps = [ chainB ]; };
  chainD = simple { name = "chain-d-1.0"; deps = [ chainC ]; };
  chainE = simple { name = "chain-e-1.0"; deps = [ chainD ]; };
%FILLER_LETS%
in
{
  nano = nanoFn { stdenv = stdenv; fetchFile = fetchFile; ncurses = ncursesPkg; };
  ncurses = ncursesPkg;
  chain-a = chainA;
  chain-b = chainB;
  chain-c = chainC;
  chain-d = chainD;
  chain-e = chainE;

  impure-stamp = derivation {
    name = "impure-stamp-1.0";
    builderScript = buildScript;
    stamp = "v-${sysVersion}";
  };
  impure-shell = derivation {
    name = "impure-shell-1.0";
    builderScript = buildScript;
    mode = if inShell then "interactive" else "batch";
  };

  leaky-current = derivation {
    name = "leaky-current-1.0";
    builderScript = leakyCurrentScript;
  };
  leaky-past = derivation {
    name = "leaky-past-1.0";
    builderScript = leakyPastScript;
  };
  flaky-one = derivation {
    name = "%FLAKY_NAME%";
    builderScript = flakyScript;
    salt = "%FLAKY_SALT%";
  };

  env-dump = derivation {
    name = "env-dump-1.0";
    builderScript = dumpScript;
    buildInputs = [ ncursesPkg.dev chainC ];
  };

  other-platform = derivation {
    name = "other-platform-1.0";
    builderScript = buildScript;
    meta = { platforms = [ "mips64-none" ]; };
  };

  tools = {
    recurseForDerivations = true;
    "b.c" = derivation { name = "tool-bc-1.0"; builderScript = buildScript; };
    plain = derivation { name = "tool-plain-1.0"; builderScript = buildScript; };
  };
""")

    lines.extend(filler_attrs)
    lines.append("}")

    text = "\n".join(lines) + "\n"
    text = text.replace("%FILLER_LETS%", "\n".join(filler_lets))
    text = text.replace("%NANO_SHA%", nano_sha)
    text = text.replace("%NANO_FLAGS%", nano_flags)
    text = text.replace("%NCURSES_URL%", NCURSES_URL)
    text = text.replace("%NCURSES_SHA%", ncurses_sha)
    text = text.replace("%CHAIN_A_VERSION%", chain_a_version)
    text = text.replace("%FLAKY_NAME%", FLAKY_NAME)
    text = text.replace("%FLAKY_SALT%", str(flaky_salt))
    return text


def _filler_jobs(rev: int) -> int:
    return 40 if rev < 3 else 41


def expected_job_count(rev: int) -> int:
    # nano, ncurses, 5 chain links, 2 impure, 2 leaky, flaky, env-dump,
    # tools."b.c", tools.plain, plus the fillers; other-platform is filtered.
    return 15 + _filler_jobs(rev)


def generate(base_dir: str, flaky_salt: int | None = None) -> Corpus:
    revisions_root = os.path.join(base_dir, "revisions")
    mirror = os.path.join(base_dir, "mirror")
    os.makedirs(revisions_root, exist_ok=True)
    os.makedirs(mirror, exist_ok=True)

    for url, content in ((NANO_URL, NANO_SOURCE), (NCURSES_URL, NCURSES_SOURCE)):
        key = hashlib.sha256(url.encode("utf-8")).hexdigest()
        with open(os.path.join(mirror, key), "w", encoding="utf-8") as f:
            f.write(content)

    nano_sha = hashlib.sha256(NANO_SOURCE.encode("utf-8")).hexdigest()
    ncurses_sha = hashlib.sha256(NCURSES_SOURCE.encode("utf-8")).hexdigest()
    if flaky_salt is None:
        flaky_salt = find_flaky_salt()

    manifest_lines = []
    job_counts = {}
    for rev, dirname in enumerate(sorted(REV_TIMESTAMPS), start=1):
        rev_dir = os.path.join(revisions_root, dirname)
        os.makedirs(rev_dir, exist_ok=True)
        with open(os.path.join(rev_dir, "default.rcp"), "w", encoding="utf-8") as f:
            f.write(_revision_source(rev, nano_sha, ncurses_sha, flaky_salt))
        manifest_lines.append(f"{REV_TIMESTAMPS[dirname]}\t{dirname}")
        job_counts[dirname] = expected_job_count(rev)

    with open(os.path.join(revisions_root, "revisions.tsv"), "w", encoding="utf-8") as f:
        f.write("\n".join(manifest_lines) + "\n")

    return Corpus(
        revisions_root=revisions_root,
        mirror=mirror,
        flaky_salt=flaky_salt,
        job_counts=job_counts,
    )
