import base64
import hashlib


def default(subject, time, extension='gff', **kwargs):
    """
    Easy-geodesics' default artifact name.

    For example: ``s007_t012.gff``
    """
    return 's{0}_t{1:03g}.{2}'.format(
        str(subject).lstrip('s'), float(time), extension)


def _short_hash(parts, length=9):
    digest = hashlib.sha1(':'.join(parts).encode('utf-8')).digest()
    return base64.urlsafe_b64encode(digest[:length]).decode('utf-8')


def stage_stamp(stage, prepared_options, inputs=(), previous='', **kwargs):
    """
    The content stamp of a pipeline stage: a 12 character hash of the stage
    name, its prepared options, the stamp of the stage before it and the
    bytes of its input artifacts.
    """
    parts = [stage, previous] + list(prepared_options)
    for content in inputs:
        parts.append(hashlib.sha1(content).hexdigest())
    return _short_hash(parts)
