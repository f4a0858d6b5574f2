"""Malformed table/sidecar fixtures shared by the format tests and the
acceptance suite.  Each entry is (name, kind, content); kind selects which
loader argument receives the content ("table", "emb", or "itm").  All must
be rejected with TableFormatError."""

VALID_ROW = '{"image":"i0","text":"t0","tokens":["a","b"],"logp":[-1.0,-2.0]}'

# A valid table naming both i0 and i1 as images; sidecar fixtures are
# loaded against it so modality checks (image vs text) engage.
VALID_TABLE = (
    VALID_ROW + "\n"
    '{"image":"i1","text":"t0","tokens":["a","b"],"logp":[-0.5,-0.25]}\n'
    '{"image":"null","text":"t0","tokens":["a","b"],"logp":[-0.75,-1.0]}\n'
)

MALFORMED = [
    ("invalid-json", "table", "{not json\n"),
    ("json-array-not-object", "table", '["image","text"]\n'),
    ("missing-image-field", "table", '{"text":"t0","tokens":["a"],"logp":[-1.0]}\n'),
    ("missing-text-field", "table", '{"image":"i0","tokens":["a"],"logp":[-1.0]}\n'),
    ("missing-tokens-field", "table", '{"image":"i0","text":"t0","logp":[-1.0]}\n'),
    ("missing-logp-field", "table", '{"image":"i0","text":"t0","tokens":["a"]}\n'),
    ("tokens-not-a-list", "table", '{"image":"i0","text":"t0","tokens":"ab","logp":[-1.0]}\n'),
    ("empty-token-string", "table", '{"image":"i0","text":"t0","tokens":["a",""],"logp":[-1.0,-1.0]}\n'),
    ("non-string-token", "table", '{"image":"i0","text":"t0","tokens":["a",3],"logp":[-1.0,-1.0]}\n'),
    ("logp-not-a-list", "table", '{"image":"i0","text":"t0","tokens":["a"],"logp":-1.0}\n'),
    ("non-numeric-logp", "table", '{"image":"i0","text":"t0","tokens":["a"],"logp":["x"]}\n'),
    ("nan-logp", "table", '{"image":"i0","text":"t0","tokens":["a"],"logp":[NaN]}\n'),
    ("infinite-logp", "table", '{"image":"i0","text":"t0","tokens":["a"],"logp":[-Infinity]}\n'),
    ("positive-logp", "table", '{"image":"i0","text":"t0","tokens":["a"],"logp":[0.5]}\n'),
    ("ragged-logp-length", "table", '{"image":"i0","text":"t0","tokens":["a","b"],"logp":[-1.0]}\n'),
    ("empty-token-list", "table", '{"image":"i0","text":"t0","tokens":[],"logp":[]}\n'),
    ("duplicate-key", "table", VALID_ROW + "\n" + VALID_ROW + "\n"),
    ("reserved-id-as-text", "table", '{"image":"i0","text":"null","tokens":["a"],"logp":[-1.0]}\n'),
    (
        "tokens-differ-for-same-text",
        "table",
        VALID_ROW + "\n" + '{"image":"i1","text":"t0","tokens":["a","c"],"logp":[-1.0,-2.0]}\n',
    ),
    (
        "length-differs-for-same-text",
        "table",
        VALID_ROW + "\n" + '{"image":"i1","text":"t0","tokens":["a"],"logp":[-1.0]}\n',
    ),
    ("empty-image-id", "table", '{"image":"","text":"t0","tokens":["a"],"logp":[-1.0]}\n'),
    ("emb-duplicate-id", "emb", '{"id":"i0","vec":[1.0]}\n{"id":"i0","vec":[2.0]}\n'),
    ("emb-reserved-id", "emb", '{"id":"null","vec":[1.0]}\n'),
    (
        "emb-dim-mismatch",
        "emb",
        '{"id":"i0","vec":[1.0,0.0]}\n{"id":"i1","vec":[1.0]}\n',
    ),
    ("emb-zero-vector", "emb", '{"id":"i0","vec":[0.0,0.0]}\n'),
    ("emb-non-finite", "emb", '{"id":"i0","vec":[1.0,Infinity]}\n'),
    ("emb-missing-vec", "emb", '{"id":"i0"}\n'),
    (
        "itm-duplicate-pair",
        "itm",
        '{"image":"i0","text":"t0","logit":1.0}\n{"image":"i0","text":"t0","logit":2.0}\n',
    ),
    ("itm-non-finite-logit", "itm", '{"image":"i0","text":"t0","logit":Infinity}\n'),
    ("itm-positive-lp-yes", "itm", '{"image":"i0","text":"t0","lp_yes":0.5,"lp_no":-1.0}\n'),
    ("itm-lp-yes-without-lp-no", "itm", '{"image":"i0","text":"t0","lp_yes":-0.5}\n'),
    ("itm-no-value-fields", "itm", '{"image":"i0","text":"t0"}\n'),
    ("itm-reserved-image", "itm", '{"image":"null","text":"t0","logit":0.5}\n'),
    ("itm-reserved-text", "itm", '{"image":"i0","text":"null","logit":0.5}\n'),
]

assert len(MALFORMED) >= 20
