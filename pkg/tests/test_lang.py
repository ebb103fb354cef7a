import pytest

from mfpm.errors import EvalError, RecipeSyntaxError, TopLevelNotAttrs
from mfpm.lang import ast
from mfpm.lang.eval import EvalConfig, Evaluator
from mfpm.lang.parser import parse
from mfpm.lang.values import VAttrs, VBool, VDrv, VInt, VList, VStr
from mfpm.store import Store


@pytest.fixture()
def ev(tmp_path):
    return Evaluator(Store(str(tmp_path / "store")))


def run(ev, source):
    return ev.eval_source(source)


# -- parsing ---------------------------------------------------------------


def test_fig_style_header_parses_to_set_pattern():
    expr = parse("{ stdenv, fetchFile, ncurses }: stdenv")
    assert isinstance(expr, ast.Lambda)
    assert isinstance(expr.param, ast.SetPattern)
    assert expr.param.names == ("stdenv", "fetchFile", "ncurses")


def test_empty_attrset():
    expr = parse("{}")
    assert isinstance(expr, ast.AttrSet)
    assert expr.bindings == ()
    assert not expr.recursive


def test_quoted_attr_name_with_dot():
    expr = parse('{ "b.c" = 1; }')
    assert isinstance(expr, ast.AttrSet)
    assert expr.bindings[0][0] == "b.c"


def test_rec_attrset_flag():
    assert parse("rec { a = 1; }").recursive


def test_duplicate_attr_rejected():
    with pytest.raises(RecipeSyntaxError):
        parse("{ a = 1; a = 2; }")


def test_syntax_error_carries_position():
    with pytest.raises(RecipeSyntaxError) as err:
        parse("{ a = ; }")
    assert err.value.line == 1
    assert err.value.column >= 1


def test_float_literals_rejected():
    with pytest.raises(RecipeSyntaxError):
        parse("1.5")


def test_select_quoted_segment():
    expr = parse('tools."b.c"')
    assert isinstance(expr, ast.Select)
    assert expr.attr_path == ("b.c",)


def test_comments_ignored():
    expr = parse("# heading\n{ a = 1; # trailing\n}")
    assert isinstance(expr, ast.AttrSet)


# -- evaluation ---------------------------------------------------------------


def test_laziness_error_branch_never_forced(ev):
    value = run(ev, "if true then 1 else boom")
    assert value == VInt(1)


def test_if_requires_bool(ev):
    with pytest.raises(EvalError):
        run(ev, 'if 1 then "a" else "b"')


def test_undefined_identifier(ev):
    with pytest.raises(EvalError) as err:
        run(ev, "nope")
    assert "undefined identifier" in str(err.value)


def test_let_bindings_are_recursive_and_lazy(ev):
    value = run(ev, 'let a = b; b = "tied"; never = boom; in a')
    assert value == VStr("tied")


def test_attrs_member_evaluated_at_most_once(ev):
    # Forcing the same member twice must not re-evaluate: the second force
    # returns the memoized value even though the first poisoned a sibling.
    top = run(ev, 'let x = { good = "ok"; bad = boom; }; in x')
    assert isinstance(top, VAttrs)
    assert ev.force(top.members["good"]) == VStr("ok")
    with pytest.raises(EvalError):
        ev.force(top.members["bad"])
    with pytest.raises(EvalError):
        ev.force(top.members["bad"])


def test_rec_attrset_self_reference(ev):
    value = run(ev, 'rec { pname = "nano"; version = "7.2"; full = "${pname}-${version}"; }')
    assert ev.force(value.members["full"]) == VStr("nano-7.2")


def test_infinite_recursion_detected(ev):
    with pytest.raises(EvalError) as err:
        run(ev, "let x = x; in x")
    assert "recursion" in str(err.value)


def test_apply_ident_pattern_is_lazy_in_argument(ev):
    value = run(ev, "(x: 1) boom")
    assert value == VInt(1)


def test_set_pattern_exact_match(ev):
    assert run(ev, "({ a, b }: a) { a = 1; b = 2; }") == VInt(1)
    with pytest.raises(EvalError):
        run(ev, "({ a, b }: a) { a = 1; }")
    with pytest.raises(EvalError):
        run(ev, "({ a }: a) { a = 1; b = 2; }")


def test_string_interpolation_coercions(ev):
    assert run(ev, '"n=${toString 42} t=${toString true} f=${toString false}."') == VStr("n=42 t=1 f=.")


def test_sys_version_stub_and_trace():
    # Stub the version to 2.6 and observe both the value and the trace.
    ev = Evaluator(Store.__new__(Store), EvalConfig(sys_version="2.6"))
    value = ev.eval_source('let v = sysVersion; in "nano-${v}"')
    assert value.value == "nano-2.6"
    assert value.tainted
    assert ev.trace.impure_builtins_used == {"sysVersion"}


def test_in_shell_taints_through_condition(tmp_path):
    ev = Evaluator(Store(str(tmp_path)), EvalConfig(in_shell=True))
    value = ev.eval_source('if inShell then "shell" else "batch"')
    assert value == VStr("shell", tainted=True)


def test_list_values_lazy(ev):
    value = run(ev, "[ 1 boom ]")
    assert isinstance(value, VList)
    assert ev.force(value.items[0]) == VInt(1)
    with pytest.raises(EvalError):
        ev.force(value.items[1])


# -- the derivation builtin ----------------------------------------------------


NANO_FIXTURE = r"""
let
  buildScript = "#!/bin/sh\nexit 0\n";
  fetchScript = "#!/bin/sh\nexit 0\n";
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
  ncurses = derivation {
    name = "ncurses-6.4";
    builderScript = buildScript;
    outputs = [ "out" "dev" ];
  };
  nanoFn = { stdenv, fetchFile, ncurses }:
    stdenv.mkDerivation rec {
      pname = "nano";
      version = "7.2";
      src = fetchFile {
        url = "mirror://gnu/nano/${pname}-${version}.tar.xz";
        sha256 = "0000000000000000000000000000000000000000000000000000000000000000";
        script = fetchScript;
      };
      buildInputs = [ ncurses.dev ];
      configureFlags = [ "--sysconfdir=/etc" ];
    };
in nanoFn { stdenv = stdenv; fetchFile = fetchFile; ncurses = ncurses; }
"""


def test_nano_fixture_env_matches_expected_shape(ev):
    value = run(ev, NANO_FIXTURE)
    assert isinstance(value, VDrv)
    drv = ev.lookup(value.drv_path)
    env = drv.env_dict()
    assert env["configureFlags"] == "--sysconfdir=/etc"
    assert env["name"] == "nano-7.2"
    assert env["buildInputs"].endswith("-ncurses-6.4-dev")
    input_names = sorted(p for p, _ in drv.input_drvs)
    assert any(p.endswith("-nano-7.2.tar.xz.drv") for p in input_names)
    assert any(p.endswith("-ncurses-6.4.drv") for p in input_names)
    assert dict(drv.input_drvs)[next(p for p in input_names if "ncurses" in p)] == ("dev",)


def test_drv_path_exists_in_store_after_evaluation(ev):
    value = run(ev, 'derivation { name = "x-1.0"; builderScript = "#!/bin/sh\\n"; }')
    assert ev.store.has_path(value.drv_path)


def test_derivation_requires_name(ev):
    with pytest.raises(EvalError):
        run(ev, 'derivation { builderScript = "s"; }')


def test_derivation_rejects_reserved_env(ev):
    with pytest.raises(EvalError):
        run(ev, 'derivation { name = "x"; builderScript = "s"; PATH = "/bin"; }')
    with pytest.raises(EvalError):
        run(ev, 'derivation { name = "x"; builderScript = "s"; outputs = [ "out" "dev" ]; dev = "clash"; }')


def test_derivation_rejects_plain_string_builder(ev):
    # A bare path string would smuggle in an untracked dependency.
    with pytest.raises(EvalError):
        run(ev, 'derivation { name = "x"; builder = "/mfpm/store/aaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaa-sh"; }')


def test_fetch_file_defaults_name_from_url(ev):
    value = run(
        ev,
        'fetchFile { url = "mirror://x/pkg-1.0.tar"; sha256 = "'
        + "ab" * 32
        + '"; }',
    )
    assert isinstance(value, VDrv)
    drv = ev.lookup(value.drv_path)
    assert drv.name == "pkg-1.0.tar"
    assert drv.fixed_output == ("sha256", "ab" * 32)
    assert drv.env_dict()["url"] == "mirror://x/pkg-1.0.tar"


def test_select_on_derivation_outputs(ev):
    value = run(ev, 'derivation { name = "m-1.0"; builderScript = "s"; outputs = [ "out" "dev" ]; }')
    dev = ev.select(value, "dev")
    assert dev.selected == "dev"
    with pytest.raises(EvalError):
        ev.select(value, "doc")


def test_builtin_ref_node(ev):
    pos = ast.Pos(1, 1)
    assert isinstance(ev.eval_expr(ast.BuiltinRef(pos, "derivation")), object)
    with pytest.raises(EvalError):
        ev.eval_expr(ast.BuiltinRef(pos, "nosuch"))


def test_eval_expr_with_scope(ev):
    value = ev.eval_expr(parse('"${greeting}!"'), {"greeting": VStr("hi")})
    assert value == VStr("hi!")
