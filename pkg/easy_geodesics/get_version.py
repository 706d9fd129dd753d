import datetime
import os
import subprocess

SUFFIXES = {'alpha': 'a', 'beta': 'b', 'rc': 'rc'}


def get_version(version=None):
    """
    Build a PEP 440 version string from a five part ``VERSION`` tuple.

    Development releases (``alpha`` with a zero serial) get the timestamp of
    the latest git commit appended, when one can be found.
    """
    if version is None:
        from easy_geodesics import VERSION as version
    major, minor, micro, level, serial = version
    if level not in ('alpha', 'beta', 'rc', 'final', 'post'):
        raise ValueError("Unknown release level {0!r}".format(level))

    release = [major, minor] if micro == 0 else [major, minor, micro]
    main = '.'.join(str(part) for part in release)

    if level == 'final':
        return main
    if level == 'post':
        return '{0}.post{1}'.format(main, serial or get_git_changeset() or 0)
    if level == 'alpha' and serial == 0:
        changeset = get_git_changeset()
        return '{0}.dev{1}'.format(main, changeset) if changeset else main
    return '{0}{1}{2}'.format(main, SUFFIXES[level], serial)


def get_git_changeset():
    """
    Return the UTC timestamp (``YYYYMMDDHHMMSS``) of the latest git commit of
    the checkout this package lives in, or ``None``.
    """
    repo_dir = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    try:
        output = subprocess.run(
            ['git', 'log', '--pretty=format:%ct', '--quiet', '-1', 'HEAD'],
            stdout=subprocess.PIPE, stderr=subprocess.DEVNULL,
            cwd=repo_dir, universal_newlines=True).stdout
        timestamp = datetime.datetime.utcfromtimestamp(int(output))
    except (OSError, ValueError):
        return None
    return timestamp.strftime('%Y%m%d%H%M%S')
