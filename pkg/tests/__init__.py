from tests import base