from django.core.files.storage import FileSystemStorage
from django.utils.deconstruct import deconstructible
from django.utils.module_loading import import_string

from easy_geodesics.conf import settings


@deconstructible
class ArtifactFileSystemStorage(FileSystemStorage):
    """
    Standard file system storage for pipeline artifacts.

    The default ``location`` is ``GEODESICS_MEDIA_ROOT``, falling back to the
    standard ``MEDIA_ROOT`` if the custom setting is blank.
    """
    def __init__(self, location=None, *args, **kwargs):
        if location is None:
            location = settings.GEODESICS_MEDIA_ROOT or None
        super().__init__(location, *args, **kwargs)

    def get_available_name(self, name, max_length=None):
        # Artifacts are regenerated in place.
        if self.exists(name):
            self.delete(name)
        return name


def get_storage(location=None):
    return import_string(settings.GEODESICS_DEFAULT_STORAGE)(location)

