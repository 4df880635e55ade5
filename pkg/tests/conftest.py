import pytest

from storyweaver.config import asset_path
from storyweaver.poetry import load_glossary, load_lexicon, load_templates
from storyweaver.topic import build_index


@pytest.fixture(scope="session")
def bundled_lexicon():
    return load_lexicon(asset_path("rhymes.dict"))


@pytest.fixture(scope="session")
def bundled_templates():
    return load_templates(asset_path("templates.txt"))


@pytest.fixture(scope="session")
def bundled_glossary():
    return load_glossary(asset_path("glossary.tsv"))


@pytest.fixture(scope="session")
def dinosaur_index():
    raw = asset_path("Dinosaur.txt").read_text(encoding="utf-8")
    return build_index("Dinosaur", raw)
